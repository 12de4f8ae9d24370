"""Grasp record persistence and synthetic desk-scale corpora.

A dataset is a directory: ``manifest.json`` plus one volume file per record
part under ``volumes/``. Appends write volumes first and atomically replace
the manifest last, so a crash never leaves the manifest pointing at a missing
file. Synthetic target objects are analytic primitives voxelized at voxel
centers, emitted pre-stabilized: centered in x and y, resting on the ground
plane (lowest occupied layer at z = 0).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fingerforge as ff
from . import voxelgrid as vg
from .fingerforge import Finger
from .graspsim import GraspScore
from .voxelgrid import TsdfVolume

FORMAT_VERSION = 1
PROVENANCES = ("imprint", "shapenet_style", "generated", "baseline")
KINDS = ("box", "cylinder", "sphere", "T", "L", "ring", "union")


class DatasetError(ValueError):
    """Manifest or record validation failure."""


@dataclass
class GraspRecord:
    id: str
    object_id: str
    object_path: str
    left_path: str
    right_path: str
    score: list
    provenance: str
    config_hash: str = ""

    def __post_init__(self):
        self.score = [int(b) for b in self.score]
        if len(self.score) != 11 or any(b not in (0, 1) for b in self.score):
            raise DatasetError(f"record {self.id}: score must be 11 bits, got {self.score}")
        if self.provenance not in PROVENANCES:
            raise DatasetError(f"record {self.id}: unknown provenance {self.provenance!r}")

    @property
    def success(self) -> int:
        return self.score[0]


@dataclass
class Manifest:
    name: str
    records: list
    format_version: int = FORMAT_VERSION

    def counts(self) -> dict:
        by_prov = {}
        by_success = {"0": 0, "1": 0}
        for r in self.records:
            by_prov[r.provenance] = by_prov.get(r.provenance, 0) + 1
            by_success[str(r.success)] += 1
        return {"by_provenance": by_prov, "by_success": by_success}


def _manifest_path(root):
    return os.path.join(str(root), "manifest.json")


def init_dataset(root, name: str) -> Manifest:
    os.makedirs(os.path.join(str(root), "volumes"), exist_ok=True)
    manifest = Manifest(name, [])
    _write_manifest(root, manifest)
    return manifest


def _write_manifest(root, manifest: Manifest) -> None:
    payload = {
        "format_version": manifest.format_version,
        "name": manifest.name,
        "counts": manifest.counts(),
        "records": [asdict(r) for r in manifest.records],
    }
    tmp = _manifest_path(root) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, _manifest_path(root))


def load_dataset(root) -> Manifest:
    path = _manifest_path(root)
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"{root}: no manifest.json, not a dataset directory")
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})")
    records = []
    for raw in payload.get("records", []):
        rec = GraspRecord(**{k: raw[k] for k in
                             ("id", "object_id", "object_path", "left_path",
                              "right_path", "score", "provenance", "config_hash")})
        for part in (rec.object_path, rec.left_path, rec.right_path):
            if not os.path.exists(os.path.join(str(root), part)):
                raise DatasetError(f"record {rec.id}: missing volume file {part}")
        records.append(rec)
    manifest = Manifest(payload["name"], records, payload["format_version"])
    if payload.get("counts") != manifest.counts():
        raise DatasetError(f"{path}: counts are inconsistent with the record list")
    return manifest


def append_record(root, obj: TsdfVolume, left: Finger, right: Finger,
                  score: GraspScore | list, provenance: str,
                  object_id: str = "", config_hash: str = "") -> GraspRecord:
    """Persist one (o, f_l, f_r, score) tuple; volumes first, manifest last."""
    manifest = load_dataset(root)
    rid = f"r{len(manifest.records):06d}"
    vec = score.as_vector() if isinstance(score, GraspScore) else list(score)
    paths = {}
    for part, payload in (("o", obj), ("l", left), ("r", right)):
        rel = os.path.join("volumes", f"{rid}_{part}.tsdf")
        full = os.path.join(str(root), rel)
        if part == "o":
            vg.write_volume(payload, full)
        else:
            ff.save_finger(payload, full)
        paths[part] = rel
    record = GraspRecord(rid, object_id or rid, paths["o"], paths["l"], paths["r"],
                         vec, provenance, config_hash)
    manifest.records.append(record)
    _write_manifest(root, manifest)
    return record


def load_record_volumes(root, record: GraspRecord):
    obj = vg.read_volume(os.path.join(str(root), record.object_path))
    left = ff.load_finger(os.path.join(str(root), record.left_path))
    right = ff.load_finger(os.path.join(str(root), record.right_path))
    return obj, left, right


def split(records: list, train_fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic, disjoint train/test split of a record list."""
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must be in [0, 1]")
    order = np.random.default_rng(seed).permutation(len(records))
    cut = int(round(train_fraction * len(records)))
    train = [records[i] for i in order[:cut]]
    test = [records[i] for i in order[cut:]]
    return train, test


def import_volume(path) -> TsdfVolume:
    """Load and validate an externally produced volume file."""
    return vg.read_volume(path)


# ---------------------------------------------------------------------------
# Synthetic target objects.

def _primitive_sdf(kind: str, params: dict, grid, rng) -> np.ndarray:
    """Signed distance in voxel units at the given voxel-center coordinates."""
    x, y, z = grid

    def box(center, size):
        q = np.stack([np.abs(x - center[0]) - size[0] / 2,
                      np.abs(y - center[1]) - size[1] / 2,
                      np.abs(z - center[2]) - size[2] / 2])
        outside = np.sqrt((np.maximum(q, 0) ** 2).sum(axis=0))
        return outside + np.minimum(q.max(axis=0), 0)

    def sphere(center, radius):
        return np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2
                       + (z - center[2]) ** 2) - radius

    def cylinder(center, radius, height):
        d_r = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2) - radius
        d_z = np.abs(z - center[2]) - height / 2
        outside = np.sqrt(np.maximum(d_r, 0) ** 2 + np.maximum(d_z, 0) ** 2)
        return outside + np.minimum(np.maximum(d_r, d_z), 0)

    def torus(center, major, tube):
        q_r = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2) - major
        return np.sqrt(q_r ** 2 + (z - center[2]) ** 2) - tube

    n = x.shape[0]
    cx = cy = n / 2.0
    if kind == "box":
        size = params["size"]
        return box((cx, cy, size[2] / 2), size)
    if kind == "sphere":
        r = params["radius"]
        return sphere((cx, cy, r), r)
    if kind == "cylinder":
        r, h = params["radius"], params["height"]
        return cylinder((cx, cy, h / 2), r, h)
    if kind == "ring":
        major, tube = params["major_radius"], params["tube_radius"]
        return torus((cx, cy, tube), major, tube)
    if kind == "T":
        bar = params.get("bar", [n * 0.7, n * 0.3, n * 0.25])
        stem = params.get("stem", [n * 0.25, n * 0.3, n * 0.55])
        d1 = box((cx, cy, bar[2] / 2), bar)
        d2 = box((cx, cy, bar[2] + stem[2] / 2), stem)
        return np.minimum(d1, d2)
    if kind == "L":
        base = params.get("base", [n * 0.65, n * 0.3, n * 0.25])
        arm = params.get("arm", [n * 0.25, n * 0.3, n * 0.5])
        d1 = box((cx, cy, base[2] / 2), base)
        d2 = box((cx - base[0] / 2 + arm[0] / 2, cy, base[2] + arm[2] / 2), arm)
        return np.minimum(d1, d2)
    if kind == "union":
        k = int(params.get("k", 3))
        if k < 1:
            raise ValueError("union needs k >= 1 primitives")
        sdf = None
        for _ in range(k):
            sub_kind = KINDS[rng.integers(0, 3)]  # box / cylinder / sphere parts
            sub = _random_params(sub_kind, n, rng)
            center = (cx + rng.uniform(-n / 6, n / 6),
                      cy + rng.uniform(-n / 6, n / 6),
                      rng.uniform(n / 6, n / 2))
            if sub_kind == "box":
                d = box(center, sub["size"])
            elif sub_kind == "sphere":
                d = sphere(center, sub["radius"])
            else:
                d = cylinder(center, sub["radius"], sub["height"])
            sdf = d if sdf is None else np.minimum(sdf, d)
        return sdf
    raise ValueError(f"unknown object kind {kind!r}")


def _random_params(kind: str, n: int, rng) -> dict:
    if kind == "box":
        return {"size": list(rng.uniform(n * 0.25, n * 0.6, size=3))}
    if kind == "sphere":
        return {"radius": float(rng.uniform(n * 0.15, n * 0.3))}
    if kind == "cylinder":
        return {"radius": float(rng.uniform(n * 0.12, n * 0.28)),
                "height": float(rng.uniform(n * 0.3, n * 0.7))}
    if kind == "ring":
        tube = float(rng.uniform(n * 0.06, n * 0.12))
        return {"major_radius": float(rng.uniform(n * 0.18, n * 0.3)), "tube_radius": tube}
    if kind in ("T", "L", "union"):
        return {"k": int(rng.integers(2, 4))} if kind == "union" else {}
    raise ValueError(f"unknown object kind {kind!r}")


def synth_object(kind: str, params: dict | None = None, seed: int = 0,
                 dims=vg.DEFAULT_DIMS, voxel_size: float = 0.0) -> TsdfVolume:
    """Voxelize one analytic primitive, grounded and centered in x, y.

    Parameters are in voxel units. The signed distance is evaluated at voxel
    centers, scaled by the standard truncation band, and clamped to [-1, 1].
    """
    rng = np.random.default_rng(seed)
    params = dict(params or _random_params(kind, dims[0], rng))
    for key, val in params.items():
        arr = np.atleast_1d(np.asarray(val, dtype=float))
        if key != "k" and (arr <= 0).any():
            raise ValueError(f"{kind}: parameter {key} must be positive, got {val}")
    idx = np.indices(dims).astype(np.float64) + 0.5
    sdf = _primitive_sdf(kind, params, idx, rng)
    # Ground the shape: drop it so the lowest occupied layer sits at z = 0.
    occ = sdf < 0
    if occ.any():
        z_min = int(np.nonzero(occ.any(axis=(0, 1)))[0][0])
        if z_min > 0:
            sdf = np.roll(sdf, -z_min, axis=2)
            sdf[:, :, -z_min:] = np.maximum(sdf[:, :, -z_min:], 1e-3)
    values = np.clip(sdf / vg.DEFAULT_TRUNC_VOXELS, -1.0, 1.0).astype(np.float32)
    return TsdfVolume(values, voxel_size)


def make_object_corpus(count: int, dims=vg.DEFAULT_DIMS, seed: int = 0,
                       kinds=KINDS) -> list[tuple[str, str, TsdfVolume]]:
    """Deterministic mixed-primitive corpus: (object_id, kind, volume) triples."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        obj_seed = int(rng.integers(0, 2 ** 31 - 1))
        vol = synth_object(kind, None, obj_seed, dims)
        out.append((f"obj{i:04d}", kind, vol))
    return out


def make_finger_corpus(count: int, dims=vg.DEFAULT_DIMS, seed: int = 0) -> list[TsdfVolume]:
    """Finger-shaped training volumes: imprint halves, sliced shapes, slabs."""
    rng = np.random.default_rng(seed)
    out = []
    i = 0
    while len(out) < count:
        mode = i % 4
        sub_seed = int(rng.integers(0, 2 ** 31 - 1))
        if mode in (0, 1):
            kind = KINDS[int(rng.integers(0, len(KINDS)))]
            obj = synth_object(kind, None, sub_seed, dims)
            left, right = ff.make_imprint_pair(obj)
            out.append(left.volume)
            if len(out) < count:
                out.append(right.volume)
        elif mode == 2:
            kind = KINDS[int(rng.integers(0, len(KINDS)))]
            shape = synth_object(kind, None, sub_seed, dims)
            hand = "left" if rng.integers(0, 2) == 0 else "right"
            finger = ff.slice_and_stretch(shape.copy(), hand)
            if ff.check_feasibility(finger).feasible:
                out.append(finger.volume)
        else:
            t = int(rng.integers(max(1, dims[0] // 8), dims[0] + 1))
            hand = "left" if rng.integers(0, 2) == 0 else "right"
            out.append(ff.flat_block_finger(t, hand, dims).volume)
        i += 1
    return out[:count]
