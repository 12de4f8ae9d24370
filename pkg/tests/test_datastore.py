import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspforge import datastore as ds
from graspforge import fingerforge as ff
from graspforge import voxelgrid as vg
from graspforge.datastore import (
    DatasetError,
    GraspRecord,
    append_record,
    import_volume,
    init_dataset,
    load_dataset,
    load_record_volumes,
    make_finger_corpus,
    make_object_corpus,
    split,
    synth_object,
)
from graspforge.graspsim import GraspScore


def sample_parts(n=8, seed=0):
    obj = synth_object("sphere", {"radius": n * 0.2}, seed, dims=(n, n, n))
    left, right = ff.make_imprint_pair(obj)
    return obj, left, right


# --- records and manifests -----------------------------------------------------

def test_append_then_load_roundtrip(tmp_path):
    init_dataset(tmp_path, "demo")
    obj, left, right = sample_parts()
    score = GraspScore(1, (1, 0, 0, 1), (1, 0, 1, 0, 1, 0))
    rec = append_record(tmp_path, obj, left, right, score, "imprint", object_id="o1")
    manifest = load_dataset(tmp_path)
    assert len(manifest.records) == 1
    got = manifest.records[0]
    assert got == rec
    o2, l2, r2 = load_record_volumes(tmp_path, got)
    assert np.array_equal(o2.values, obj.values)
    assert np.array_equal(l2.volume.values, left.volume.values)
    assert np.array_equal(r2.volume.values, right.volume.values)
    assert l2.handedness == "left" and r2.handedness == "right"


def test_manifest_counts_bookkeeping(tmp_path):
    init_dataset(tmp_path, "demo")
    obj, left, right = sample_parts()
    append_record(tmp_path, obj, left, right, [1] + [0] * 10, "imprint")
    append_record(tmp_path, obj, left, right, [1] + [0] * 10, "generated")
    append_record(tmp_path, obj, left, right, [0] * 11, "generated")
    manifest = load_dataset(tmp_path)
    counts = manifest.counts()
    assert counts["by_success"] == {"0": 1, "1": 2}
    assert counts["by_provenance"] == {"imprint": 1, "generated": 2}


def test_corrupt_volume_blamed_on_record(tmp_path):
    init_dataset(tmp_path, "demo")
    obj, left, right = sample_parts()
    rec = append_record(tmp_path, obj, left, right, [0] * 11, "imprint")
    os.remove(tmp_path / rec.left_path)
    with pytest.raises(DatasetError, match=rec.id):
        load_dataset(tmp_path)


def test_manifest_count_mismatch_rejected(tmp_path):
    init_dataset(tmp_path, "demo")
    obj, left, right = sample_parts()
    append_record(tmp_path, obj, left, right, [1] + [0] * 10, "imprint")
    path = tmp_path / "manifest.json"
    payload = json.loads(path.read_text())
    payload["counts"]["by_success"] = {"0": 5, "1": 5}
    path.write_text(json.dumps(payload))
    with pytest.raises(DatasetError, match="inconsistent"):
        load_dataset(tmp_path)


def test_append_crash_before_manifest_is_safe(tmp_path, monkeypatch):
    init_dataset(tmp_path, "demo")
    obj, left, right = sample_parts()
    append_record(tmp_path, obj, left, right, [0] * 11, "imprint")

    def boom(root, manifest):
        raise RuntimeError("crash")

    monkeypatch.setattr(ds, "_write_manifest", boom)
    with pytest.raises(RuntimeError):
        append_record(tmp_path, obj, left, right, [0] * 11, "imprint")
    monkeypatch.undo()
    manifest = load_dataset(tmp_path)  # still valid, one record
    assert len(manifest.records) == 1


def test_bad_score_rejected():
    with pytest.raises(DatasetError):
        GraspRecord("r0", "o", "a", "b", "c", [1, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0], "imprint")
    with pytest.raises(DatasetError):
        GraspRecord("r0", "o", "a", "b", "c", [1, 0], "imprint")


def test_split_deterministic_and_disjoint(tmp_path):
    records = [f"rec{i}" for i in range(20)]
    a_train, a_test = split(records, 0.8, seed=5)
    b_train, b_test = split(records, 0.8, seed=5)
    assert a_train == b_train and a_test == b_test
    assert len(a_train) == 16 and len(a_test) == 4
    assert set(a_train).isdisjoint(a_test)
    assert set(a_train) | set(a_test) == set(records)
    c_train, _ = split(records, 0.8, seed=6)
    assert c_train != a_train  # different seed reshuffles


# --- import ------------------------------------------------------------------

def test_import_roundtrip(tmp_path):
    v = synth_object("box", {"size": [4, 4, 4]}, dims=(8, 8, 8))
    path = tmp_path / "v.tsdf"
    vg.write_volume(v, path)
    w = import_volume(path)
    assert np.array_equal(w.values, v.values)


def test_import_truncated_fails(tmp_path):
    v = synth_object("box", {"size": [4, 4, 4]}, dims=(8, 8, 8))
    path = tmp_path / "v.tsdf"
    vg.write_volume(v, path)
    path.write_bytes(path.read_bytes()[:50])
    with pytest.raises(vg.FormatError):
        import_volume(path)


# --- synthetic objects ---------------------------------------------------------

def test_sphere_volume_within_two_percent():
    v = synth_object("sphere", {"radius": 10.0}, dims=(40, 40, 40))
    count = vg.occupancy_from_tsdf(v).sum()
    analytic = 4.0 / 3.0 * np.pi * 10.0 ** 3
    assert abs(count - analytic) / analytic < 0.02


def test_box_exact_count():
    v = synth_object("box", {"size": [20, 20, 20]}, dims=(40, 40, 40))
    assert vg.occupancy_from_tsdf(v).sum() == 8000


def test_synth_deterministic():
    a = synth_object("union", {"k": 3}, seed=99, dims=(16, 16, 16))
    b = synth_object("union", {"k": 3}, seed=99, dims=(16, 16, 16))
    assert np.array_equal(a.values, b.values)


@settings(max_examples=14, deadline=None)
@given(st.sampled_from(ds.KINDS), st.integers(0, 10_000))
def test_synth_grounded_and_in_bound(kind, seed):
    v = synth_object(kind, None, seed, dims=(16, 16, 16))
    occ = vg.occupancy_from_tsdf(v)
    assert occ.any()
    assert occ[:, :, 0].any()           # touches the ground plane
    assert float(v.values.min()) >= -1.0 and float(v.values.max()) <= 1.0


def test_degenerate_params_rejected():
    with pytest.raises(ValueError):
        synth_object("box", {"size": [0, 4, 4]}, dims=(8, 8, 8))
    with pytest.raises(ValueError):
        synth_object("sphere", {"radius": -1}, dims=(8, 8, 8))
    with pytest.raises(ValueError):
        synth_object("pyramid", {}, dims=(8, 8, 8))


def test_object_corpus_deterministic_mix():
    a = make_object_corpus(10, dims=(16, 16, 16), seed=3)
    b = make_object_corpus(10, dims=(16, 16, 16), seed=3)
    assert [k for _, k, _ in a] == [k for _, k, _ in b]
    for (_, _, va), (_, _, vb) in zip(a, b):
        assert np.array_equal(va.values, vb.values)
    assert len({k for _, k, _ in a}) >= 3


def test_finger_corpus_shapes_and_determinism():
    a = make_finger_corpus(12, dims=(16, 16, 16), seed=1)
    b = make_finger_corpus(12, dims=(16, 16, 16), seed=1)
    assert len(a) == 12
    for va, vb in zip(a, b):
        assert va.dims == (16, 16, 16)
        assert np.array_equal(va.values, vb.values)
