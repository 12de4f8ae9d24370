"""Candidate finger construction and manufacturability (feasibility) rules.

Fingers live in the same cubical bound as grasp objects. A left finger mounts
on its -x face, a right finger on its +x face; the opposite face is the one
that approaches the object. Feasibility requires a single connected component
whose mount-face coverage is at least ``BASE_AREA_THRESHOLD`` of the face.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import voxelgrid as vg
from .voxelgrid import TsdfVolume

BASE_AREA_THRESHOLD = 0.10

_MOUNT_FACE = {"left": "-x", "right": "+x"}


@dataclass
class Finger:
    volume: TsdfVolume
    handedness: str  # "left" | "right"

    def __post_init__(self):
        if self.handedness not in _MOUNT_FACE:
            raise ValueError(f"handedness must be 'left' or 'right', got {self.handedness!r}")

    @property
    def mount_face(self) -> str:
        return _MOUNT_FACE[self.handedness]

    def occupancy(self) -> np.ndarray:
        return vg.occupancy_from_tsdf(self.volume)

    def mount_plane_index(self) -> int:
        return 0 if self.handedness == "left" else self.volume.dims[0] - 1


@dataclass
class FeasibilityReport:
    base_fraction: float
    component_count: int  # after largest-component repair: 1 if non-empty else 0
    feasible: bool


def tsdf_from_occupancy(occ: np.ndarray, voxel_size: float = 0.0,
                        origin=(0.0, 0.0, 0.0),
                        trunc_voxels: float = vg.DEFAULT_TRUNC_VOXELS) -> TsdfVolume:
    """Recompute a TSDF from a boolean grid via Euclidean distance transforms.

    Used so that constructed fingers (imprints, slabs, repaired shapes) share
    value semantics with decoded volumes instead of carrying bare sign flips.
    """
    occ = np.asarray(occ, dtype=bool)
    if not occ.any():
        values = np.ones(occ.shape, dtype=np.float32)
    elif occ.all():
        values = -np.ones(occ.shape, dtype=np.float32)
    else:
        d_out = ndimage.distance_transform_edt(~occ)
        d_in = ndimage.distance_transform_edt(occ)
        values = np.clip((d_out - d_in) / trunc_voxels, -1.0, 1.0).astype(np.float32)
    return TsdfVolume(values, voxel_size, origin)


def make_imprint_pair(obj: TsdfVolume, trunc: float | None = None) -> tuple[Finger, Finger]:
    """Build the complementary finger pair for an object.

    The object is fused from its two x-views (lateral cavities disappear, so
    the fingers can close), negated at the occupancy level, and split at the
    mid-plane. Each half becomes the inner slab of the finger on its own side,
    and the outer half of the finger bound is filled solid so the finger is
    always base connected. An empty object yields two solid blocks.
    """
    front = vg.depth_from_tsdf(obj, "+x")
    back = vg.depth_from_tsdf(obj, "-x")
    fused = vg.fuse_two_views(front, back, trunc, dims=obj.dims,
                              voxel_size=obj.voxel_size, origin=obj.origin)
    occ = vg.occupancy_from_tsdf(fused)
    nx = obj.dims[0]
    if nx % 2:
        raise vg.DimensionError(f"object x dimension must be even, got {nx}")
    h = nx // 2

    left_occ = np.ones(obj.dims, dtype=bool)
    left_occ[h:] = ~occ[:h]          # inner slab carries the cavity, x-order kept
    right_occ = np.ones(obj.dims, dtype=bool)
    right_occ[:h] = ~occ[h:]

    left = Finger(tsdf_from_occupancy(left_occ, obj.voxel_size), "left")
    right = Finger(tsdf_from_occupancy(right_occ, obj.voxel_size), "right")
    return left, right


def slice_and_stretch(volume: TsdfVolume, handedness: str,
                      area_threshold: float = BASE_AREA_THRESHOLD) -> Finger:
    """Turn an arbitrary shape into a base-connectable finger candidate.

    Scans mount-face-parallel planes through the third of the bound nearest the
    mount face, from the face inward, for the first plane whose occupied
    cross-section reaches ``area_threshold`` of the face area. Material beyond
    that plane toward the mount face is discarded and the remainder is
    stretched (trilinear, along x) so the found plane becomes the mount face.
    Without a qualifying plane the shape is returned unchanged; the feasibility
    check will reject it.
    """
    occ = vg.occupancy_from_tsdf(volume)
    nx, ny, nz = volume.dims
    need = area_threshold * ny * nz
    n_scan = max(1, nx // 3)
    counts = occ.sum(axis=(1, 2))

    if handedness == "left":
        planes = range(0, n_scan)
    elif handedness == "right":
        planes = range(nx - 1, nx - 1 - n_scan, -1)
    else:
        raise ValueError(f"handedness must be 'left' or 'right', got {handedness!r}")

    plane = next((p for p in planes if counts[p] >= need), None)
    if plane is None:
        return Finger(volume.copy(), handedness)
    if (handedness == "left" and plane == 0) or (handedness == "right" and plane == nx - 1):
        return Finger(volume.copy(), handedness)

    # Map output x' in [0, nx) onto the retained span so the found plane lands
    # exactly on the mount face.
    xp = np.arange(nx, dtype=np.float64)
    if handedness == "left":
        src_x = plane + xp * (nx - 1 - plane) / (nx - 1)
    else:
        src_x = xp * plane / (nx - 1)
    coords = np.empty((3, nx, ny, nz))
    coords[0] = src_x[:, None, None]
    coords[1] = np.arange(ny)[None, :, None]
    coords[2] = np.arange(nz)[None, None, :]
    out = ndimage.map_coordinates(volume.values.astype(np.float64), coords, order=1)
    stretched = TsdfVolume(np.clip(out, -1, 1).astype(np.float32),
                           volume.voxel_size, volume.origin)
    return Finger(stretched, handedness)


def flat_block_finger(thickness_voxels: int, handedness: str = "left",
                      dims=vg.DEFAULT_DIMS, voxel_size: float = 0.0) -> Finger:
    """Solid slab of the given thickness against the mount face, spanning y and z."""
    nx = dims[0]
    if not 1 <= thickness_voxels <= nx:
        raise ValueError(f"thickness must be in [1, {nx}], got {thickness_voxels}")
    occ = np.zeros(dims, dtype=bool)
    if handedness == "left":
        occ[:thickness_voxels] = True
    else:
        occ[nx - thickness_voxels:] = True
    return Finger(tsdf_from_occupancy(occ, voxel_size), handedness)


def _largest_component_stats(finger: Finger):
    occ = finger.occupancy()
    comp = vg.largest_component(occ)
    if not comp.any():
        return comp, 0.0
    plane = comp[finger.mount_plane_index()]
    ny, nz = plane.shape
    return comp, float(plane.sum()) / (ny * nz)


def check_feasibility(finger: Finger,
                      base_area_threshold: float = BASE_AREA_THRESHOLD) -> FeasibilityReport:
    """Feasibility report computed on the largest-component repaired occupancy.

    Repair never turns an infeasible finger feasible: a repaired shape whose
    mount-face coverage stays below the threshold is still rejected.
    """
    comp, base_fraction = _largest_component_stats(finger)
    count = 1 if comp.any() else 0
    feasible = count == 1 and base_fraction >= base_area_threshold
    return FeasibilityReport(base_fraction, count, feasible)


def repair_finger(finger: Finger) -> Finger:
    """Reduce a finger to its largest connected component (TSDF recomputed)."""
    comp, _ = _largest_component_stats(finger)
    vol = tsdf_from_occupancy(comp, finger.volume.voxel_size, finger.volume.origin)
    return Finger(vol, finger.handedness)


def save_finger(finger: Finger, path) -> None:
    """Write the volume plus a JSON sidecar {handedness, mount_face}."""
    path = str(path)
    vg.write_volume(finger.volume, path)
    sidecar = {"handedness": finger.handedness, "mount_face": finger.mount_face}
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f, sort_keys=True)
        f.write("\n")


def load_finger(path) -> Finger:
    path = str(path)
    volume = vg.read_volume(path)
    try:
        with open(_sidecar_path(path)) as f:
            meta = json.load(f)
        handedness = meta["handedness"]
    except FileNotFoundError:
        handedness = "left"
    return Finger(volume, handedness)


def _sidecar_path(path: str) -> str:
    return (path[:-5] if path.endswith(".tsdf") else path) + ".json"
