"""Dense TSDF volume type and the voxel geometry primitives shared by all modules.

Conventions used throughout the package:

* volumes are indexed ``values[x, y, z]``, dtype float32, every value in [-1, 1];
  negative means interior (occupied), positive exterior, 0 the surface
* the serialized linear order is x-fastest: ``flat[x + nx * (y + ny * z)]``
* occupancy uses a strict test (``value < iso``), so exactly-iso voxels are
  exterior and the surface shell never thickens the occupancy
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

# Depth sentinel: no surface along the ray.
FAR = np.inf

DEFAULT_DIMS = (40, 40, 40)
BOUND_METERS = 0.06           # cubical bound side length for objects and fingers
DEFAULT_TRUNC_VOXELS = 5.0    # truncation band, in voxels, when (re)building TSDFs

MAGIC = b"TSDF"

# Occupancy grids and component labelings are plain ndarrays (bool / int32).
OccupancyGrid = np.ndarray


class DimensionError(ValueError):
    """Grid or image shapes are incompatible."""


class FormatError(ValueError):
    """A binary volume file failed validation."""


def default_voxel_size(dims) -> float:
    return BOUND_METERS / dims[0]


@dataclass
class TsdfVolume:
    """Dense truncated-signed-distance volume over a cubical (or box) bound."""

    values: np.ndarray
    voxel_size: float = 0.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DimensionError(f"expected a non-empty 3D value grid, got shape {self.values.shape}")
        if not self.voxel_size:
            self.voxel_size = default_voxel_size(self.values.shape)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < -1.0 or hi > 1.0:
            raise ValueError(f"TSDF values outside [-1, 1]: min={lo}, max={hi}")
        self.origin = tuple(float(c) for c in self.origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def copy(self) -> "TsdfVolume":
        return TsdfVolume(self.values.copy(), self.voxel_size, self.origin)

    @classmethod
    def filled(cls, dims=DEFAULT_DIMS, value=1.0, voxel_size=0.0, origin=(0.0, 0.0, 0.0)):
        return cls(np.full(dims, value, dtype=np.float32), voxel_size, origin)


@dataclass
class DepthImage:
    """Per-ray depth along +x or -x, covering the y-z face of a grid.

    ``depths[y, z]`` is the distance in meters from the near x-face of the
    bound to the first surface along the ray; ``FAR`` means no surface.
    """

    depths: np.ndarray
    view_axis: str = "+x"

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.depths.ndim != 2:
            raise DimensionError(f"depth image must be 2D, got shape {self.depths.shape}")
        if self.view_axis not in ("+x", "-x"):
            raise ValueError(f"view_axis must be '+x' or '-x', got {self.view_axis!r}")
        finite = self.depths[np.isfinite(self.depths)]
        if finite.size and finite.min() < 0:
            raise ValueError("depths must be >= 0")

    @property
    def width(self) -> int:
        return self.depths.shape[0]

    @property
    def height(self) -> int:
        return self.depths.shape[1]


def occupancy_from_tsdf(v: TsdfVolume, iso: float = 0.0) -> OccupancyGrid:
    """Boolean occupancy grid; a voxel is set iff its value is strictly below iso."""
    if not -1.0 < iso < 1.0:
        raise ValueError(f"iso must lie in (-1, 1), got {iso}")
    return v.values < iso


def depth_from_tsdf(v: TsdfVolume, view_axis: str, iso: float = 0.0) -> DepthImage:
    """Render a single-axis depth image of the zero-crossing surface.

    The surface position is found per (y, z) ray as the linear interpolation of
    the first sign change along the ray, so binary volumes report the voxel
    boundary and smooth TSDFs report sub-voxel depth.
    """
    vals = v.values if view_axis == "+x" else v.values[::-1]
    if view_axis not in ("+x", "-x"):
        raise ValueError(f"view_axis must be '+x' or '-x', got {view_axis!r}")
    nx = vals.shape[0]
    occ = vals < iso
    hit = occ.any(axis=0)
    first = np.argmax(occ, axis=0)

    depths = np.full(vals.shape[1:], FAR)
    # Rays whose very first voxel is occupied: surface at the bound face.
    face = hit & (first == 0)
    depths[face] = 0.0
    inner = hit & (first > 0)
    if inner.any():
        yy, zz = np.nonzero(inner)
        i = first[inner]
        v_prev = vals[i - 1, yy, zz].astype(np.float64)
        v_next = vals[i, yy, zz].astype(np.float64)
        t = (v_prev - iso) / (v_prev - v_next)
        depths[inner] = (i - 1 + t + 0.5) * v.voxel_size
    return DepthImage(depths, view_axis)


def fuse_two_views(front: DepthImage, back: DepthImage, trunc: float | None = None,
                   dims=None, voxel_size: float = 0.0,
                   origin=(0.0, 0.0, 0.0)) -> TsdfVolume:
    """Fuse opposing +x / -x depth images into a TSDF.

    Each voxel takes the signed distance along its x ray to the nearer observed
    surface (exterior positive), truncated to +-trunc and normalized to [-1, 1].
    Regions occluded from both views fuse as interior, so per-ray occupancy is a
    single contiguous x interval and lateral cavities disappear.
    """
    if front.depths.shape != back.depths.shape:
        raise DimensionError(
            f"front/back depth shapes differ: {front.depths.shape} vs {back.depths.shape}")
    if {front.view_axis, back.view_axis} != {"+x", "-x"}:
        raise ValueError("fuse_two_views needs one '+x' and one '-x' image")
    if front.view_axis == "-x":
        front, back = back, front

    ny, nz = front.depths.shape
    if dims is None:
        dims = (ny, ny, nz)
    nx = dims[0]
    if (dims[1], dims[2]) != (ny, nz):
        raise DimensionError(f"depth images {ny}x{nz} do not cover the y-z face of {dims}")
    if not voxel_size:
        voxel_size = default_voxel_size(dims)
    if trunc is None:
        trunc = DEFAULT_TRUNC_VOXELS * voxel_size

    span = nx * voxel_size
    xc = (np.arange(nx, dtype=np.float64) + 0.5) * voxel_size
    sd_front = front.depths[None, :, :] - xc[:, None, None]
    sd_back = back.depths[None, :, :] - (span - xc[:, None, None])

    ext = np.minimum(np.where(sd_front > 0, sd_front, np.inf),
                     np.where(sd_back > 0, sd_back, np.inf))
    # Occluded from both views: signed distance to the nearer surface (<= 0);
    # a FAR view propagates +inf here, which clips to fully exterior below.
    interior = np.maximum(sd_front, sd_back)
    sd = np.where(np.isfinite(ext), ext, interior)
    values = np.clip(sd / trunc, -1.0, 1.0).astype(np.float32)
    return TsdfVolume(values, voxel_size, origin)


def connected_components(g: OccupancyGrid, connectivity: int = 6) -> np.ndarray:
    """Label 6-connected components of a boolean grid; 0 is background.

    Labels are contiguous from 1. Only face connectivity is supported: it is the
    strictest neighborhood and guarantees printable, face-connected solids.
    """
    if connectivity != 6:
        raise ValueError("only 6-connectivity is supported")
    structure = ndimage.generate_binary_structure(3, 1)
    labels, _ = ndimage.label(np.asarray(g, dtype=bool), structure=structure)
    return labels.astype(np.int32)


def _linear_index(shape):
    # x-fastest linearization, matching the binary file order.
    nx, ny, _ = shape
    x, y, z = np.indices(shape)
    return x + nx * (y + ny * z)


def largest_component(g: OccupancyGrid) -> OccupancyGrid:
    """Keep only the largest 6-connected component (empty stays empty).

    Ties are broken deterministically toward the component containing the
    smallest x-fastest linear voxel index.
    """
    g = np.asarray(g, dtype=bool)
    labels = connected_components(g)
    n = labels.max()
    if n == 0:
        return np.zeros_like(g)
    sizes = np.bincount(labels.ravel())[1:]
    best = sizes.max()
    candidates = np.nonzero(sizes == best)[0] + 1
    if len(candidates) == 1:
        keep = candidates[0]
    else:
        lin = _linear_index(g.shape)
        keep = min(candidates, key=lambda lab: lin[labels == lab].min())
    return labels == keep


def shifted_overlap(a: OccupancyGrid, offset, b: OccupancyGrid) -> int:
    """Count voxels where ``a`` translated by the integer offset intersects ``b``.

    Both grids share one world-aligned frame; voxels of ``a`` shifted out of the
    frame vanish.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"grids must share a frame: {a.shape} vs {b.shape}")
    sa, sb = [], []
    for n, o in zip(a.shape, offset):
        o = int(o)
        lo = max(0, -o)
        hi = min(n, n - o)
        if hi <= lo:
            return 0
        sa.append(slice(lo, hi))
        sb.append(slice(lo + o, hi + o))
    return int(np.count_nonzero(a[tuple(sa)] & b[tuple(sb)]))


def rotate_about_z(v: TsdfVolume, angle: float) -> TsdfVolume:
    """Rotate a volume about its central z axis by ``angle`` degrees.

    Positive angles rotate counterclockwise seen from +z. Resampling is
    trilinear; samples falling outside the source read +1 (exterior), so the
    rotation never invents material. angle == 0 returns a bitwise copy.
    """
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    if angle == 0:
        return v.copy()
    nx, ny, nz = v.dims
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    th = np.deg2rad(angle)
    c, s = np.cos(th), np.sin(th)
    x, y = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    # Inverse map: where each output voxel samples the source.
    xs = c * (x - cx) + s * (y - cy) + cx
    ys = -s * (x - cx) + c * (y - cy) + cy
    coords = np.empty((3, nx, ny, nz))
    coords[0] = xs[:, :, None]
    coords[1] = ys[:, :, None]
    coords[2] = np.arange(nz)[None, None, :]
    out = ndimage.map_coordinates(v.values.astype(np.float64), coords,
                                  order=1, mode="constant", cval=1.0)
    return TsdfVolume(np.clip(out, -1.0, 1.0).astype(np.float32), v.voxel_size, v.origin)


def negate(v: TsdfVolume) -> TsdfVolume:
    """Flip the sign of every value (interior becomes exterior and vice versa)."""
    return TsdfVolume(-v.values, v.voxel_size, v.origin)


def split_mid_x(v: TsdfVolume) -> tuple[TsdfVolume, TsdfVolume]:
    """Split into low-x and high-x halves; requires an even x dimension."""
    nx = v.dims[0]
    if nx % 2:
        raise DimensionError(f"x dimension must be even to split, got {nx}")
    h = nx // 2
    left = TsdfVolume(v.values[:h].copy(), v.voxel_size, v.origin)
    right_origin = (v.origin[0] + h * v.voxel_size, v.origin[1], v.origin[2])
    right = TsdfVolume(v.values[h:].copy(), v.voxel_size, right_origin)
    return left, right


# ---------------------------------------------------------------------------
# Binary volume file format:
#   "TSDF" | u32 x3 dims | f32 voxel_size | f32 x3 origin | f32 values x-fastest
# all little-endian.

def write_volume(v: TsdfVolume, path) -> None:
    nx, ny, nz = v.dims
    header = MAGIC + struct.pack("<3I", nx, ny, nz)
    header += struct.pack("<f", v.voxel_size) + struct.pack("<3f", *v.origin)
    payload = np.asarray(v.values, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as f:
        f.write(header + payload)


def read_volume(path) -> TsdfVolume:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 32 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a TSDF volume file")
    nx, ny, nz = struct.unpack_from("<3I", data, 4)
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive dims ({nx}, {ny}, {nz})")
    voxel_size, = struct.unpack_from("<f", data, 16)
    origin = struct.unpack_from("<3f", data, 20)
    expected = 32 + 4 * nx * ny * nz
    if len(data) != expected:
        raise FormatError(f"{path}: truncated or oversized file "
                          f"(expected {expected} bytes, got {len(data)})")
    flat = np.frombuffer(data, dtype="<f4", offset=32)
    bad = np.nonzero((flat < -1.0) | (flat > 1.0) | ~np.isfinite(flat))[0]
    if bad.size:
        i = int(bad[0])
        x = i % nx
        y = (i // nx) % ny
        z = i // (nx * ny)
        raise FormatError(f"{path}: value {flat[i]} out of [-1, 1] at voxel "
                          f"({x}, {y}, {z}) (linear index {i})")
    values = flat.reshape((nx, ny, nz), order="F").copy()
    return TsdfVolume(values, float(voxel_size), tuple(float(c) for c in origin))
