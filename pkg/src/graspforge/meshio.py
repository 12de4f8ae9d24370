"""Triangle mesh extraction and export (OBJ / binary STL) for TSDF volumes.

Export is the manufacturability-facing end of the pipeline; simulation itself
stays voxel-native. Meshing walks the classic 256-case marching cubes table
with linear interpolation along cell edges, sampled at voxel centers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .mc_tables import EDGE_TABLE, TRI_TABLE
from .voxelgrid import TsdfVolume

WELD_TOLERANCE = 1e-6  # meters

_CORNERS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
_EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
                 (0, 4), (1, 5), (2, 6), (3, 7))
# Canonical identity of each cube edge: (corner offset of its low end, axis),
# so adjacent cubes share exactly one vertex per crossing edge.
_EDGE_CANONICAL = (((0, 0, 0), 0), ((1, 0, 0), 1), ((0, 1, 0), 0), ((0, 0, 0), 1),
                   ((0, 0, 1), 0), ((1, 0, 1), 1), ((0, 1, 1), 0), ((0, 0, 1), 1),
                   ((0, 0, 0), 2), ((1, 0, 0), 2), ((1, 1, 0), 2), ((0, 1, 0), 2))


@dataclass
class TriangleMesh:
    vertices: np.ndarray                      # (n, 3) float64, meters
    triangles: np.ndarray                     # (m, 3) int32 vertex indices
    normals: np.ndarray = field(default=None)  # (m, 3) per-triangle unit normals

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")
        if self.normals is None:
            self.normals = triangle_normals(self.vertices, self.triangles)
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def signed_volume(self) -> float:
        if self.is_empty():
            return 0.0
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def triangle_normals(vertices, triangles) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros((0, 3))
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    lengths = np.linalg.norm(n, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    return n / lengths


def marching_cubes(v: TsdfVolume, iso: float = 0.0) -> TriangleMesh:
    """Extract the iso-surface as a consistently outward-oriented mesh.

    Vertices are welded (1e-6 m) and degenerate triangles dropped, so volumes
    whose boundary shell is uniformly positive produce watertight meshes. A
    volume with no interior produces an empty mesh.
    """
    if not -1.0 < iso < 1.0:
        raise ValueError(f"iso must lie in (-1, 1), got {iso}")
    vals = v.values.astype(np.float64)
    nx, ny, nz = vals.shape
    if min(nx, ny, nz) < 2:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    inside = vals < iso

    cube_index = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        cube_index |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int32) << bit
    active = np.argwhere((cube_index > 0) & (cube_index < 255))

    vs = v.voxel_size
    origin = np.asarray(v.origin)
    vertex_ids: dict = {}
    vertices: list = []
    triangles: list = []

    for i, j, k in active:
        cube = int(cube_index[i, j, k])
        edge_mask = EDGE_TABLE[cube]
        local = {}
        for e in range(12):
            if not edge_mask & (1 << e):
                continue
            off, axis = _EDGE_CANONICAL[e]
            key = (i + off[0], j + off[1], k + off[2], axis)
            vid = vertex_ids.get(key)
            if vid is None:
                c1, c2 = _EDGE_CORNERS[e]
                p1 = np.array((i, j, k), dtype=np.float64) + _CORNERS[c1]
                p2 = np.array((i, j, k), dtype=np.float64) + _CORNERS[c2]
                v1 = vals[int(p1[0]), int(p1[1]), int(p1[2])]
                v2 = vals[int(p2[0]), int(p2[1]), int(p2[2])]
                t = 0.5 if v1 == v2 else np.clip((iso - v1) / (v2 - v1), 0.0, 1.0)
                pos = origin + (p1 + t * (p2 - p1) + 0.5) * vs
                vid = len(vertices)
                vertices.append(pos)
                vertex_ids[key] = vid
            local[e] = vid
        row = TRI_TABLE[cube]
        for t0 in range(0, 16, 3):
            if row[t0] < 0:
                break
            # Table winding is inward for value<iso interiors; swap for outward.
            triangles.append((local[row[t0]], local[row[t0 + 2]], local[row[t0 + 1]]))

    if not triangles:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    return _weld(np.array(vertices), np.array(triangles, dtype=np.int32))


def _weld(vertices: np.ndarray, triangles: np.ndarray) -> TriangleMesh:
    """Merge vertices within tolerance, drop zero-area triangles."""
    keys = np.round(vertices / WELD_TOLERANCE).astype(np.int64)
    seen: dict = {}
    remap = np.empty(len(vertices), dtype=np.int64)
    kept = []
    for i, key in enumerate(map(tuple, keys)):
        idx = seen.get(key)
        if idx is None:
            idx = len(kept)
            seen[key] = idx
            kept.append(vertices[i])
        remap[i] = idx
    tris = remap[triangles]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    distinct = (a != b) & (b != c) & (a != c)
    tris = tris[distinct]
    verts = np.array(kept)
    if len(tris):
        n = np.cross(verts[tris[:, 1]] - verts[tris[:, 0]],
                     verts[tris[:, 2]] - verts[tris[:, 0]])
        tris = tris[np.linalg.norm(n, axis=1) > 1e-18]
    return TriangleMesh(verts, tris.astype(np.int32))


def write_obj(mesh: TriangleMesh, path) -> None:
    """ASCII OBJ: v/f records, 1-based indices, canonical %.6f formatting."""
    with open(path, "w") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        for a, b, c in mesh.triangles:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def read_obj(path) -> TriangleMesh:
    vertices, triangles = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(t.split("/")[0]) - 1 for t in parts[1:]]
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
    if not vertices:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    return TriangleMesh(np.array(vertices), np.array(triangles, dtype=np.int32))


def write_stl(mesh: TriangleMesh, path) -> None:
    """Binary STL: 80-byte header, u32 count, 50-byte records, little-endian."""
    header = b"graspforge binary stl".ljust(80, b"\0")
    with open(path, "wb") as f:
        f.write(header)
        f.write(struct.pack("<I", len(mesh.triangles)))
        for tri, normal in zip(mesh.triangles, mesh.normals):
            rec = struct.pack("<3f", *normal)
            for vid in tri:
                rec += struct.pack("<3f", *mesh.vertices[vid])
            rec += struct.pack("<H", 0)
            f.write(rec)
