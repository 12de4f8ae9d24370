"""Deterministic quasi-static grasp evaluation on voxel occupancies.

The simulation world is a side-by-side frame three bounds wide along x,
ordered (left finger | object | right finger). Closing advances the fingers
alternately one voxel at a time, left first; an advance that would overlap the
object instead pushes the object along x when nothing blocks the push,
otherwise the finger jams. After closing, lift / stability / robustness bits
are decided by geometric blocking tests and a Coulomb friction budget, with no
time integration. The result is the 11-bit quality vector
[success, S1..S4, one robustness bit per pre-grasp yaw angle].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import fingerforge as ff
from . import voxelgrid as vg
from .fingerforge import Finger
from .voxelgrid import TsdfVolume

DEFAULT_ROBUSTNESS_ANGLES = (-30.0, -20.0, -10.0, 10.0, 20.0, 30.0)

# Force directions for the four stability tests: straight down plus the three
# upper-ring vertices of the regular tetrahedron whose fourth vertex is -z.
# The ring azimuth is fixed at 0/120/240 degrees from +x for determinism.
_RING = math.sqrt(8.0) / 3.0
STABILITY_DIRECTIONS = (
    (0.0, 0.0, -1.0),
    (_RING, 0.0, 1.0 / 3.0),
    (_RING * math.cos(2 * math.pi / 3), _RING * math.sin(2 * math.pi / 3), 1.0 / 3.0),
    (_RING * math.cos(4 * math.pi / 3), _RING * math.sin(4 * math.pi / 3), 1.0 / 3.0),
)


@dataclass
class SceneConfig:
    """Physical constants of the evaluation protocol."""

    object_mass: float = 0.05
    gravity: float = 9.81
    object_lateral_friction: float = 0.2
    object_rolling_friction: float = 0.001    # recorded, unused (no rotational DOF)
    finger_lateral_friction: float = 1.0
    finger_rolling_friction: float = 1.0      # recorded, unused
    grasp_force: float = 1.0
    stability_force: float = 1.5
    robustness_angles: tuple = DEFAULT_ROBUSTNESS_ANGLES
    position_offset: tuple = (0.0, 0.0)       # (x, y) meters, quantized to voxels

    def __post_init__(self):
        for name in ("object_mass", "gravity", "object_lateral_friction",
                     "object_rolling_friction", "finger_lateral_friction",
                     "finger_rolling_friction", "grasp_force", "stability_force"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        self.robustness_angles = tuple(float(a) for a in self.robustness_angles)
        if not self.robustness_angles:
            raise ValueError("robustness_angles must be nonempty")
        self.position_offset = (float(self.position_offset[0]), float(self.position_offset[1]))

    @property
    def contact_friction(self) -> float:
        return self.object_lateral_friction * self.finger_lateral_friction

    def friction_capacity(self) -> float:
        return 2.0 * self.contact_friction * self.grasp_force


@dataclass
class GraspScore:
    success: int
    stability: tuple = (0, 0, 0, 0)
    robustness: tuple = (0,) * 6

    def as_vector(self) -> list[int]:
        return [int(self.success), *map(int, self.stability), *map(int, self.robustness)]

    @classmethod
    def zero(cls, n_angles: int = 6) -> "GraspScore":
        return cls(0, (0, 0, 0, 0), (0,) * n_angles)

    @classmethod
    def from_vector(cls, vec) -> "GraspScore":
        vec = [int(b) for b in vec]
        if len(vec) < 5 or any(b not in (0, 1) for b in vec):
            raise ValueError(f"grasp score vector must be >= 5 bits in {{0,1}}, got {vec}")
        return cls(vec[0], tuple(vec[1:5]), tuple(vec[5:]))


@dataclass
class SceneWorld:
    """Occupancy frame (3n, n, n) holding (f_l | o | f_r) and their poses."""

    left: np.ndarray
    obj: np.ndarray
    right: np.ndarray
    advance_l: int = 0
    advance_r: int = 0
    obj_shift: int = 0

    def __post_init__(self):
        n = self.obj.shape[0]
        if self.left.shape != self.obj.shape or self.right.shape != self.obj.shape:
            raise vg.DimensionError("fingers and object must share one bound")
        self.n = n

    def left_start(self) -> int:
        return self.advance_l

    def obj_start(self) -> int:
        return self.n + self.obj_shift

    def right_start(self) -> int:
        return 2 * self.n - self.advance_r

    def frame(self) -> np.ndarray:
        out = np.zeros((3 * self.n,) + self.obj.shape[1:], dtype=bool)
        out[self.left_start():self.left_start() + self.n] |= self.left
        out[self.obj_start():self.obj_start() + self.n] |= self.obj
        out[self.right_start():self.right_start() + self.n] |= self.right
        return out

    def placed(self, grid: np.ndarray, start: int) -> np.ndarray:
        out = np.zeros((3 * self.n,) + self.obj.shape[1:], dtype=bool)
        out[max(0, start):max(0, min(3 * self.n, start + self.n))] = \
            grid[max(0, -start):max(0, min(self.n, 3 * self.n - start))]
        return out


def _x_overlap(a: np.ndarray, a_start: int, b: np.ndarray, b_start: int) -> bool:
    """Do two bound-sized grids, placed at x offsets, intersect?"""
    n = a.shape[0]
    lo = max(a_start, b_start)
    hi = min(a_start + n, b_start + n)
    if hi <= lo:
        return False
    return bool(np.logical_and(a[lo - a_start:hi - a_start],
                               b[lo - b_start:hi - b_start]).any())


@dataclass
class ClosedState:
    advance_l: int
    advance_r: int
    displacement: int            # voxels of push-induced object travel along x
    premature_collision: bool
    both_sides_contact: bool
    contact_counts: dict
    world: SceneWorld

    def object_world(self) -> np.ndarray:
        return self.world.placed(self.world.obj, self.world.obj_start())

    def fingers_world(self) -> np.ndarray:
        left = self.world.placed(self.world.left, self.world.left_start())
        right = self.world.placed(self.world.right, self.world.right_start())
        return left | right


def _quantize_offset(cfg: SceneConfig, voxel_size: float) -> tuple[int, int]:
    # Whole voxels only; sub-voxel remainder discarded.
    return (int(cfg.position_offset[0] / voxel_size),
            int(cfg.position_offset[1] / voxel_size))


def _object_occupancy(obj: TsdfVolume, cfg: SceneConfig, angle: float = 0.0) -> np.ndarray:
    vol = vg.rotate_about_z(obj, angle) if angle else obj
    occ = vg.occupancy_from_tsdf(vol)
    dx, dy = _quantize_offset(cfg, obj.voxel_size)
    if dx or dy:
        # Shift within the bound; material pushed past the bound is clipped.
        shifted = np.zeros_like(occ)
        n = occ.shape[0]
        sx = slice(max(0, dx), min(n, n + dx))
        tx = slice(max(0, -dx), min(n, n - dx))
        sy = slice(max(0, dy), min(n, n + dy))
        ty = slice(max(0, -dy), min(n, n - dy))
        shifted[sx, sy, :] = occ[tx, ty, :]
        occ = shifted
    return occ


def close(obj: TsdfVolume, f_l: Finger, f_r: Finger, cfg: SceneConfig | None = None,
          angle: float = 0.0) -> ClosedState:
    """Close the jaw around the object; returns the resting contact state.

    Advances alternate left, right, one voxel each, starting from the outer
    thirds of the frame. A blocked advance first tries to push the object one
    voxel along x; if the pushed object would hit the opposing finger or the
    frame boundary, the finger jams for good. Terminates when both fingers have
    jammed or reached the half-bound advance limit. Fully deterministic.
    """
    cfg = cfg or SceneConfig()
    n = obj.dims[0]
    left_occ = f_l.occupancy()
    right_occ = f_r.occupancy()
    obj_occ = _object_occupancy(obj, cfg, angle)
    world = SceneWorld(left_occ, obj_occ, right_occ)
    max_advance = n // 2

    if _x_overlap(left_occ, world.left_start(), obj_occ, world.obj_start()) or \
       _x_overlap(right_occ, world.right_start(), obj_occ, world.obj_start()):
        return _finish(world, premature=True)

    jam_l = jam_r = False
    while True:
        progressed = False
        for side in ("left", "right"):
            if side == "left":
                if jam_l or world.advance_l >= max_advance:
                    continue
                finger, f_start = left_occ, world.left_start() + 1
                other, o_start = right_occ, world.right_start()
                push = 1
            else:
                if jam_r or world.advance_r >= max_advance:
                    continue
                finger, f_start = right_occ, world.right_start() - 1
                other, o_start = left_occ, world.left_start()
                push = -1

            obj_start = world.obj_start()
            if not _x_overlap(finger, f_start, obj_occ, obj_start):
                pass  # free advance
            else:
                pushed_start = obj_start + push
                in_bound = 0 <= pushed_start and pushed_start + n <= 3 * n
                if in_bound and not _x_overlap(obj_occ, pushed_start, other, o_start):
                    world.obj_shift += push
                else:
                    if side == "left":
                        jam_l = True
                    else:
                        jam_r = True
                    continue
            if side == "left":
                world.advance_l += 1
            else:
                world.advance_r += 1
            progressed = True

        done_l = jam_l or world.advance_l >= max_advance
        done_r = jam_r or world.advance_r >= max_advance
        if (done_l and done_r) or not progressed:
            break

    return _finish(world, premature=False)


def _finish(world: SceneWorld, premature: bool) -> ClosedState:
    obj_w = world.placed(world.obj, world.obj_start())
    left_w = world.placed(world.left, world.left_start())
    right_w = world.placed(world.right, world.right_start())

    def contacts(fw):
        counts = {}
        for axis, delta in (("+x", (1, 0, 0)), ("-x", (-1, 0, 0)),
                            ("+y", (0, 1, 0)), ("-y", (0, -1, 0)),
                            ("+z", (0, 0, 1)), ("-z", (0, 0, -1))):
            counts[axis] = vg.shifted_overlap(fw, delta, obj_w)
        return counts

    left_contacts = contacts(left_w)
    right_contacts = contacts(right_w)
    both = left_contacts["+x"] > 0 and right_contacts["-x"] > 0
    return ClosedState(
        advance_l=world.advance_l,
        advance_r=world.advance_r,
        displacement=world.obj_shift,
        premature_collision=premature,
        both_sides_contact=both and not premature,
        contact_counts={"left": left_contacts, "right": right_contacts},
        world=world,
    )


def lift_clauses(state: ClosedState, cfg: SceneConfig) -> tuple[bool, bool]:
    """(geometric down-block, friction hold) for the post-close lift test."""
    obj_w = state.object_world()
    fingers = state.fingers_world()
    down_block = vg.shifted_overlap(obj_w, (0, 0, -1), fingers) > 0
    friction_hold = (state.both_sides_contact and
                     cfg.friction_capacity() >= cfg.object_mass * cfg.gravity)
    return down_block, friction_hold


def lift_success(state: ClosedState, cfg: SceneConfig | None = None) -> int:
    cfg = cfg or SceneConfig()
    if state.premature_collision:
        return 0
    down_block, friction_hold = lift_clauses(state, cfg)
    return int(down_block or friction_hold)


def stability(state: ClosedState, cfg: SceneConfig | None = None,
              lifted: int | None = None) -> tuple[int, int, int, int]:
    """Four bits, one per stability force direction; all zero if the lift failed.

    Per direction the net force is gravity plus the test force. Each nonzero
    axis component must be resisted: x by finger contact in the way of the
    motion, y and z by either a geometric block or, once per direction, the
    friction budget covering the whole tangential (y, z) load. Ground support
    is unavailable because the object hangs in the gripper.
    """
    cfg = cfg or SceneConfig()
    if lifted is None:
        lifted = lift_success(state, cfg)
    if not lifted:
        return (0, 0, 0, 0)

    obj_w = state.object_world()
    fingers = state.fingers_world()
    weight = cfg.object_mass * cfg.gravity
    capacity = cfg.friction_capacity()

    def blocked(axis_delta):
        return vg.shifted_overlap(obj_w, axis_delta, fingers) > 0

    bits = []
    for d in STABILITY_DIRECTIONS:
        net = (cfg.stability_force * d[0],
               cfg.stability_force * d[1],
               cfg.stability_force * d[2] - weight)
        tangential = math.hypot(net[1], net[2])
        friction_covers = state.both_sides_contact and capacity >= tangential
        ok = True
        if net[0] != 0.0:
            ok &= blocked((1 if net[0] > 0 else -1, 0, 0))
        if net[1] != 0.0:
            ok &= blocked((0, 1 if net[1] > 0 else -1, 0)) or friction_covers
        if net[2] != 0.0:
            ok &= blocked((0, 0, 1 if net[2] > 0 else -1)) or friction_covers
        bits.append(int(ok))
    return tuple(bits)


def robustness(obj: TsdfVolume, f_l: Finger, f_r: Finger,
               cfg: SceneConfig | None = None) -> tuple:
    """One lift bit per configured pre-grasp yaw angle, same fingers each time."""
    cfg = cfg or SceneConfig()
    bits = []
    for angle in cfg.robustness_angles:
        state = close(obj, f_l, f_r, cfg, angle=angle)
        bits.append(lift_success(state, cfg))
    return tuple(bits)


def grasp_quality(obj: TsdfVolume, f_l: Finger, f_r: Finger,
                  cfg: SceneConfig | None = None) -> GraspScore:
    """Full evaluation: feasibility gate, close, lift, stability, robustness.

    Both fingers are repaired to their largest component before simulation; an
    infeasible finger zeroes the whole score vector. Pure function of its
    inputs: identical inputs and config give identical scores.
    """
    cfg = cfg or SceneConfig()
    n_angles = len(cfg.robustness_angles)
    if not (ff.check_feasibility(f_l).feasible and ff.check_feasibility(f_r).feasible):
        return GraspScore.zero(n_angles)
    f_l = ff.repair_finger(f_l)
    f_r = ff.repair_finger(f_r)
    state = close(obj, f_l, f_r, cfg)
    success = lift_success(state, cfg)
    stab = stability(state, cfg, lifted=success)
    rob = robustness(obj, f_l, f_r, cfg)
    return GraspScore(success, stab, rob)


def evaluate_report(obj: TsdfVolume, f_l: Finger, f_r: Finger,
                    cfg: SceneConfig | None = None) -> dict:
    """Machine-readable evaluation report (the per-evaluation JSON contract)."""
    cfg = cfg or SceneConfig()
    score = grasp_quality(obj, f_l, f_r, cfg)
    feasible = ff.check_feasibility(f_l).feasible and ff.check_feasibility(f_r).feasible
    if feasible:
        state = close(obj, ff.repair_finger(f_l), ff.repair_finger(f_r), cfg)
        down_block, friction_hold = lift_clauses(state, cfg)
        advances = [state.advance_l, state.advance_r]
        displacement = state.displacement
        contact_counts = {
            "left": int(sum(state.contact_counts["left"].values())),
            "right": int(sum(state.contact_counts["right"].values())),
        }
    else:
        down_block = friction_hold = False
        advances = [0, 0]
        displacement = 0
        contact_counts = {"left": 0, "right": 0}
    return {
        "score": score.as_vector(),
        "advances": advances,
        "displacement": displacement,
        "contact_counts": contact_counts,
        "clauses": {"down_block": bool(down_block), "friction_hold": bool(friction_hold)},
    }


def perturbation_sweep(obj: TsdfVolume, f_l: Finger, f_r: Finger,
                       variants: list) -> list[GraspScore]:
    """Evaluate the same grasp under each config variant, independently."""
    return [grasp_quality(obj, f_l, f_r, cfg) for cfg in variants]


def default_perturbation_menu(base: SceneConfig | None = None) -> list[tuple[str, SceneConfig]]:
    """Named variants probing mass, friction and placement uncertainty.

    Position variants use the envelope (maximum-magnitude) offsets of the
    uncertainty ranges so the sweep stays deterministic.
    """
    from dataclasses import replace
    base = base or SceneConfig()
    return [
        ("original", base),
        ("mass_100g", replace(base, object_mass=0.10)),
        ("mass_150g", replace(base, object_mass=0.15)),
        ("friction_0.1", replace(base, object_lateral_friction=0.1)),
        ("friction_0.05", replace(base, object_lateral_friction=0.05)),
        ("offset_x5mm_y10mm", replace(base, position_offset=(0.005, 0.010))),
        ("offset_x5mm_y20mm", replace(base, position_offset=(0.005, 0.020))),
    ]


def write_sweep_csv(path, rows: list[dict], n_angles: int = 6) -> None:
    """Batch CSV: one row per (object_id, variant_id) with the 11 score bits."""
    angle_cols = [f"R{i}" for i in range(n_angles)]
    header = ["object_id", "variant_id", "success", "S1", "S2", "S3", "S4", *angle_cols]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            vec = row["score"]
            writer.writerow([row["object_id"], row["variant_id"], *vec])


class EvaluatorBackend(Protocol):
    """Adapter point so an external physics engine can replace the evaluator."""

    def grasp_quality(self, obj: TsdfVolume, f_l: Finger, f_r: Finger,
                      cfg: SceneConfig) -> GraspScore: ...


class QuasiStaticEvaluator:
    """Default backend: the deterministic voxel evaluator in this module."""

    def grasp_quality(self, obj, f_l, f_r, cfg):
        return grasp_quality(obj, f_l, f_r, cfg)
