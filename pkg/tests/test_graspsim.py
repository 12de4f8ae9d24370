import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from graspforge import fingerforge as ff
from graspforge import graspsim as gs
from graspforge import voxelgrid as vg
from graspforge.fingerforge import Finger, flat_block_finger, make_imprint_pair, tsdf_from_occupancy
from graspforge.graspsim import (
    GraspScore,
    SceneConfig,
    close,
    default_perturbation_menu,
    evaluate_report,
    grasp_quality,
    lift_success,
    perturbation_sweep,
    robustness,
    stability,
)


def volume_of(occ, voxel_size=0.0):
    return tsdf_from_occupancy(np.asarray(occ, dtype=bool), voxel_size)


def centered_box(n, width):
    occ = np.zeros((n, n, n), dtype=bool)
    lo = (n - width) // 2
    occ[lo:lo + width, lo:lo + width, lo:lo + width] = True
    return occ


def cylinder_volume(n=40, radius_vox=12.3, height_frac=0.6):
    """Analytic z-axis cylinder TSDF; the pipeline treats it as rotation-symmetric."""
    c = (n - 1) / 2
    x, y, z = np.indices((n, n, n)).astype(float)
    r = np.sqrt((x - c) ** 2 + (y - c) ** 2)
    h = n * height_frac / 2
    d_r = r - radius_vox
    d_z = np.abs(z - c) - h
    outside = np.sqrt(np.maximum(d_r, 0) ** 2 + np.maximum(d_z, 0) ** 2)
    inside = np.minimum(np.maximum(d_r, d_z), 0)
    values = np.clip((outside + inside) / 5.0, -1, 1).astype(np.float32)
    return vg.TsdfVolume(values)


# --- step-replay oracle --------------------------------------------------------

def oracle_close(left_occ, obj_occ, right_occ):
    """Independent re-implementation: full world grids, explicit checks."""
    n = obj_occ.shape[0]
    w = 3 * n

    def place(grid, start):
        out = np.zeros((w,) + grid.shape[1:], dtype=bool)
        out[start:start + n] = grid
        return out

    def hit(g1, s1, g2, s2):
        return bool((place(g1, s1) & place(g2, s2)).any())

    a = b = shift = 0
    jam_l = jam_r = False
    limit = n // 2
    if hit(left_occ, 0, obj_occ, n) or hit(right_occ, 2 * n, obj_occ, n):
        return a, b, shift, True
    while not ((jam_l or a == limit) and (jam_r or b == limit)):
        if not jam_l and a < limit:
            if not hit(left_occ, a + 1, obj_occ, n + shift):
                a += 1
            elif not hit(obj_occ, n + shift + 1, right_occ, 2 * n - b):
                shift += 1
                a += 1
            else:
                jam_l = True
        if not jam_r and b < limit:
            if not hit(right_occ, 2 * n - b - 1, obj_occ, n + shift):
                b += 1
            elif not hit(obj_occ, n + shift - 1, left_occ, a):
                shift -= 1
                b += 1
            else:
                jam_r = True
    return a, b, shift, False


def random_blobs(rng, n, fill=0.15):
    occ = np.zeros((n, n, n), dtype=bool)
    for _ in range(3):
        c = rng.integers(1, n - 1, size=3)
        r = rng.integers(1, max(2, n // 3))
        x, y, z = np.indices((n, n, n))
        occ |= (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 < r ** 2
    return occ


# --- close -------------------------------------------------------------------

def test_close_empty_object_full_advance():
    obj = vg.TsdfVolume.filled((40, 40, 40), 1.0)
    state = close(obj, flat_block_finger(40, "left"), flat_block_finger(40, "right"))
    assert (state.advance_l, state.advance_r) == (20, 20)
    assert not state.both_sides_contact
    assert sum(state.contact_counts["left"].values()) == 0
    assert sum(state.contact_counts["right"].values()) == 0


def test_close_centered_box_jams_at_ten():
    obj = volume_of(centered_box(40, 20))
    state = close(obj, flat_block_finger(40, "left"), flat_block_finger(40, "right"))
    assert (state.advance_l, state.advance_r) == (10, 10)
    assert state.displacement == 0
    assert state.contact_counts["left"]["+x"] > 0
    assert state.contact_counts["right"]["-x"] > 0
    assert state.both_sides_contact


def test_close_offcenter_box_matches_replay():
    occ = np.zeros((40, 40, 40), dtype=bool)
    occ[13:33, 10:30, 10:30] = True  # box shifted +3 from center
    obj = volume_of(occ)
    left = flat_block_finger(40, "left")
    right = flat_block_finger(40, "right")
    state = close(obj, left, right)
    a, b, shift, prem = oracle_close(left.occupancy(), occ, right.occupancy())
    assert not prem
    assert (state.advance_l, state.advance_r, state.displacement) == (a, b, shift)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_close_matches_replay_oracle_random(seed):
    rng = np.random.default_rng(seed)
    n = 8
    obj_occ = random_blobs(rng, n)
    lf = Finger(volume_of(rng.random((n, n, n)) < 0.3), "left")
    rf = Finger(volume_of(rng.random((n, n, n)) < 0.3), "right")
    obj = volume_of(obj_occ)
    state = close(obj, lf, rf)
    a, b, shift, prem = oracle_close(lf.occupancy(), obj_occ, rf.occupancy())
    assert state.premature_collision == prem
    assert (state.advance_l, state.advance_r, state.displacement) == (a, b, shift)


# --- lift --------------------------------------------------------------------

def flat_squeeze_state(cfg=None, n=40, width=20, thickness=None):
    thickness = thickness or n
    obj = volume_of(centered_box(n, width))
    return close(obj, flat_block_finger(thickness, "left", dims=(n, n, n)),
                 flat_block_finger(thickness, "right", dims=(n, n, n)), cfg)


def test_lift_friction_clause_default_fails():
    cfg = SceneConfig()
    state = flat_squeeze_state(cfg)
    assert state.both_sides_contact
    # capacity 2 * (0.2 * 1.0) * 1.0 = 0.4 N < 0.05 * 9.81 = 0.4905 N
    assert cfg.friction_capacity() == pytest.approx(0.4)
    assert lift_success(state, cfg) == 0


def test_lift_friction_clause_passes_at_higher_force():
    cfg = SceneConfig(grasp_force=1.3)
    state = flat_squeeze_state(cfg)
    assert lift_success(state, cfg) == 1


def test_lift_geometric_scoop():
    n = 8
    obj_occ = np.zeros((n, n, n), dtype=bool)
    obj_occ[3:5, 3:5, 3:5] = True
    scoop = np.zeros((n, n, n), dtype=bool)
    scoop[:, :, 0:3] = True  # shelf low enough to slide under the object
    state = close(volume_of(obj_occ), Finger(volume_of(scoop), "left"),
                  Finger(volume_of(np.zeros((n, n, n), dtype=bool) | (np.indices((n, n, n))[0] >= n - 2)), "right"))
    # left scoop slides under the box: finger voxel directly below an object voxel
    assert lift_success(state, SceneConfig()) == 1


# --- stability ---------------------------------------------------------------

def test_stability_caged_imprint_box_all_pass():
    obj = volume_of(centered_box(40, 20))
    left, right = make_imprint_pair(obj)
    cfg = SceneConfig()
    state = close(obj, left, right, cfg)
    assert lift_success(state, cfg) == 1
    assert stability(state, cfg) == (1, 1, 1, 1)


def test_stability_squeeze_only_fails_downward():
    cfg = SceneConfig(grasp_force=1.3)  # enough to lift, not enough for +1.5 N down
    state = flat_squeeze_state(cfg)
    assert lift_success(state, cfg) == 1
    bits = stability(state, cfg)
    # downward: |net z| = 1.5 + 0.4905 = 1.9905 N > capacity 0.52 N, no down-block
    assert bits[0] == 0


def test_stability_zero_when_lift_failed():
    cfg = SceneConfig()
    state = flat_squeeze_state(cfg)
    assert lift_success(state, cfg) == 0
    assert stability(state, cfg) == (0, 0, 0, 0)


def test_stability_direction_table():
    dirs = np.array(gs.STABILITY_DIRECTIONS)
    # unit vectors; one straight down; ring at z=+1/3; pairwise angles equal
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.allclose(dirs[0], (0, 0, -1))
    assert np.allclose(dirs[1:, 2], 1 / 3)
    dots = [dirs[i] @ dirs[j] for i in range(4) for j in range(i + 1, 4)]
    assert np.allclose(dots, -1 / 3)


# --- robustness ----------------------------------------------------------------

def test_robustness_symmetric_cylinder_matches_success():
    obj = cylinder_volume()
    base = vg.occupancy_from_tsdf(obj)
    for angle in SceneConfig().robustness_angles:
        rotated = vg.occupancy_from_tsdf(vg.rotate_about_z(obj, angle))
        assert np.array_equal(rotated, base)  # symmetric at voxel resolution
    left, right = make_imprint_pair(obj)
    cfg = SceneConfig()
    success = lift_success(close(obj, left, right, cfg), cfg)
    assert robustness(obj, left, right, cfg) == (success,) * 6
    assert success == 1


def test_robustness_empty_object_all_zero():
    obj = vg.TsdfVolume.filled((16, 16, 16), 1.0)
    left, right = make_imprint_pair(obj)
    assert robustness(obj, left, right) == (0,) * 6


def test_robustness_matches_per_angle_replay():
    rng = np.random.default_rng(123)
    n = 16
    occ = np.zeros((n, n, n), dtype=bool)
    occ[4:13, 5:9, 3:10] = True  # elongated, off-axis box
    obj = volume_of(occ)
    left, right = make_imprint_pair(obj)
    cfg = SceneConfig()
    bits = robustness(obj, left, right, cfg)
    expected = []
    for angle in cfg.robustness_angles:
        rot_occ = vg.occupancy_from_tsdf(vg.rotate_about_z(obj, angle))
        a, b, shift, prem = oracle_close(left.occupancy(), rot_occ, right.occupancy())
        state = close(obj, left, right, cfg, angle=angle)
        assert (state.advance_l, state.advance_r, state.displacement, state.premature_collision) \
            == (a, b, shift, prem)
        expected.append(lift_success(state, cfg))
    assert bits == tuple(expected)


# --- grasp_quality -----------------------------------------------------------

def test_infeasible_finger_zeroes_score():
    n = 40
    occ = np.zeros((n, n, n), dtype=bool)
    occ[0:5, 20, 20] = True  # 1-voxel base column
    bad = Finger(volume_of(occ), "left")
    obj = volume_of(centered_box(n, 10))
    score = grasp_quality(obj, bad, flat_block_finger(40, "right"))
    assert score.as_vector() == [0] * 11


def test_empty_object_scores_zero():
    obj = vg.TsdfVolume.filled((16, 16, 16), 1.0)
    left, right = make_imprint_pair(obj)
    assert grasp_quality(obj, left, right).as_vector() == [0] * 11


def test_centered_box_imprint_full_protocol():
    obj = volume_of(centered_box(40, 20))
    left, right = make_imprint_pair(obj)
    score = grasp_quality(obj, left, right)
    assert score.success == 1
    assert score.stability == (1, 1, 1, 1)
    assert len(score.robustness) == 6
    vec = score.as_vector()
    assert len(vec) == 11 and set(vec) <= {0, 1}


def test_grasp_quality_deterministic():
    rng = np.random.default_rng(7)
    n = 16
    obj = volume_of(random_blobs(rng, n))
    left, right = make_imprint_pair(obj)
    a = grasp_quality(obj, left, right)
    b = grasp_quality(obj, left, right)
    assert a == b


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 999))
def test_stability_bits_imply_success(seed):
    rng = np.random.default_rng(seed)
    n = 8
    obj = volume_of(random_blobs(rng, n))
    lf = Finger(volume_of(rng.random((n, n, n)) < 0.4), "left")
    rf = Finger(volume_of(rng.random((n, n, n)) < 0.4), "right")
    score = grasp_quality(obj, lf, rf)
    if any(score.stability):
        assert score.success == 1


def test_friction_hold_monotone_in_grasp_force():
    obj = volume_of(centered_box(40, 20))
    lf, rf = flat_block_finger(40, "left"), flat_block_finger(40, "right")
    low = grasp_quality(obj, lf, rf, SceneConfig(grasp_force=1.0))
    high = grasp_quality(obj, lf, rf, SceneConfig(grasp_force=2.0))
    assert high.success >= low.success


# --- perturbation sweep --------------------------------------------------------

def test_sweep_empty_variant_list():
    obj = volume_of(centered_box(16, 8))
    left, right = make_imprint_pair(obj)
    assert perturbation_sweep(obj, left, right, []) == []


def test_sweep_mass_monotone_for_friction_grasp():
    obj = volume_of(centered_box(40, 20))
    lf, rf = flat_block_finger(40, "left"), flat_block_finger(40, "right")
    base = SceneConfig(grasp_force=1.3)     # friction-only grasp, passes at 50 g
    heavy = replace(base, object_mass=0.15)
    scores = perturbation_sweep(obj, lf, rf, [base, heavy])
    assert scores[0].success >= scores[1].success
    assert scores[1].success == 0


def test_sweep_mirror_symmetric_offsets():
    obj = volume_of(centered_box(40, 14))   # y-symmetric
    left, right = make_imprint_pair(obj)
    plus = SceneConfig(position_offset=(0.0, 0.01))
    minus = SceneConfig(position_offset=(0.0, -0.01))
    s_plus, s_minus = perturbation_sweep(obj, left, right, [plus, minus])
    assert s_plus == s_minus


def test_default_menu_shape():
    menu = default_perturbation_menu()
    names = [name for name, _ in menu]
    assert names[0] == "original" and len(menu) == 7
    masses = {cfg.object_mass for _, cfg in menu}
    assert {0.05, 0.10, 0.15} <= masses


# --- report ------------------------------------------------------------------

def test_evaluate_report_contract():
    obj = volume_of(centered_box(40, 20))
    left, right = make_imprint_pair(obj)
    report = evaluate_report(obj, left, right)
    assert set(report) == {"score", "advances", "displacement", "contact_counts", "clauses"}
    assert report["score"][0] == 1
    assert set(report["clauses"]) == {"down_block", "friction_hold"}
    assert report["clauses"]["down_block"] is True


def test_score_vector_roundtrip():
    score = GraspScore(1, (1, 0, 1, 0), (1, 1, 0, 0, 1, 1))
    assert GraspScore.from_vector(score.as_vector()) == score
    with pytest.raises(ValueError):
        GraspScore.from_vector([0, 2, 0, 0, 0])
