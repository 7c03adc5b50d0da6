import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dslr.geometry import Pose, compose
from dslr.metrics import chamfer
from dslr.pairing import (PairManifest, PairThreshold, format_manifest, pair_runs, parse_manifest,
                          refine_with_segmentation, split_manifest)
from dslr.scan import DYNAMIC, SensorSpec, deproject
from dslr.sim import Run, generate_paired_runs, loop_path, make_world

from oracles import pair_count_loops


def _run(xs, kind="dynamic"):
    return Run(kind, [Pose.from_xyz_yaw(x, 0.0, timestamp=float(i)) for i, x in enumerate(xs)], [])


def test_identical_paths_pair_by_index():
    xs = np.linspace(0, 10, 11)
    m = pair_runs(_run(xs), _run(xs, "static"), PairThreshold(0.1, 5.0))
    assert [(p.dynamic_index, p.static_index) for p in m.pairs] == [(i, i) for i in range(11)]
    assert all(np.allclose(p.relative.translation, 0) for p in m.pairs)


def test_single_pair_example():
    m = pair_runs(_run([0, 1, 2]), _run([0.05, 1.5], "static"), PairThreshold(0.2, 5.0))
    assert [(p.dynamic_index, p.static_index) for p in m.pairs] == [(0, 0)]


def test_empty_manifest_warns():
    with pytest.warns(RuntimeWarning):
        m = pair_runs(_run([0]), _run([5], "static"), PairThreshold(0.1, 5.0))
    assert m.status == "empty" and len(m) == 0


def test_rotation_threshold_applies():
    dyn = Run("dynamic", [Pose.from_xyz_yaw(0, 0, yaw=0.0)], [])
    st_ = Run("static", [Pose.from_xyz_yaw(0, 0, yaw=np.radians(10))], [])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert len(pair_runs(dyn, st_, PairThreshold(1.0, 5.0))) == 0
    assert len(pair_runs(dyn, st_, PairThreshold(1.0, 15.0))) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.floats(1.0, 30.0))
def test_counts_match_double_loop(seed, dt, dr):
    rng = np.random.default_rng(seed)

    def run(n):
        return Run("x", [Pose.from_xyz_yaw(*rng.uniform(-2, 2, 2), yaw=rng.uniform(-0.5, 0.5), timestamp=i)
                         for i in range(n)], [])
    d, s = run(int(rng.integers(1, 25))), run(int(rng.integers(1, 25)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full = pair_runs(d, s, PairThreshold(dt, dr), materialize=False)
        near = pair_runs(d, s, PairThreshold(dt, dr, "nearest_only"), materialize=False)
    assert len(full) == pair_count_loops(d.poses, s.poses, dt, dr)
    assert all(PairThreshold(dt, dr).accepts(p.relative) for p in full.pairs)
    full_ids = {(p.dynamic_index, p.static_index) for p in full.pairs}
    near_ids = [(p.dynamic_index, p.static_index) for p in near.pairs]
    assert set(near_ids) <= full_ids
    assert len(near_ids) == len({i for i, _ in full_ids})


def test_split_sizes_and_partition():
    m = PairManifest([type("P", (), {"dynamic_index": i})() for i in range(100)])
    a, b, c = split_manifest(m, (0.8, 0.1, 0.1), seed=4)
    assert (len(a), len(b), len(c)) == (80, 10, 10)
    ids = [{p.dynamic_index for p in part.pairs} for part in (a, b, c)]
    assert set().union(*ids) == set(range(100))
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    again = split_manifest(m, (0.8, 0.1, 0.1), seed=4)
    assert [p.dynamic_index for p in again[1].pairs] == [p.dynamic_index for p in b.pairs]
    with pytest.raises(ValueError):
        split_manifest(m, (0.5, 0.1, 0.1))


def test_manifest_text_round_trip():
    m = pair_runs(_run([0, 1]), _run([0.01, 1.02], "static"), PairThreshold(0.1, 5.0), materialize=False)
    for k, p in enumerate(m.pairs):
        p.dynamic_ref, p.static_ref, p.transformed_ref = f"d/{k}.rimg", f"s/{k}.rimg", f"a/{k}.rimg"
    text = format_manifest(m)
    assert all(len(line.split("\t")) == 10 for line in text.splitlines())
    back = parse_manifest(text)
    assert format_manifest(back) == text
    with pytest.raises(ValueError):
        parse_manifest("a\tb\n")


def test_refine_with_all_zero_mask_returns_dynamic(sim_pairs):
    static, dynamic, m = sim_pairs
    p = m.pairs[0]
    d = dynamic.scans[p.dynamic_index]
    out = refine_with_segmentation(p.transformed, d, np.zeros(d.shape, bool))
    assert out.same_as(d)


def test_refine_at_equal_pose_gives_static_scan(sim_pairs):
    static, dynamic, m = sim_pairs
    for p in m.pairs:
        if p.static_index != p.dynamic_index:
            continue
        mask = dynamic.masks[p.dynamic_index]
        out = refine_with_segmentation(p.transformed, dynamic.scans[p.dynamic_index], mask)
        gt = static.scans[p.static_index]
        assert np.array_equal(out.occupied, gt.occupied) and np.array_equal(out.ranges, gt.ranges)
        keep = ~mask
        assert np.array_equal(out.ranges[keep], dynamic.scans[p.dynamic_index].ranges[keep])


def _alignment_gains(static, dynamic, m):
    gains = []
    for p in m.pairs:
        d = deproject(dynamic.scans[p.dynamic_index], dynamic.masks[p.dynamic_index])
        d_static = d.xyz[d.labels != DYNAMIC]
        before = chamfer(deproject(static.scans[p.static_index]), d_static).normalized
        after = chamfer(deproject(p.transformed), d_static).normalized
        gains.append(before - after)
    return np.array(gains)


def test_alignment_reduces_chamfer_per_pair():
    gains = _alignment_gains(*_shifted(SensorSpec(32, 256, (-15.0, 10.0), 50.0)))
    assert len(gains) >= 20 and gains.min() >= 0


def test_alignment_reduces_chamfer_at_desk_resolution():
    # 64 azimuth bins put neighbouring returns ~1 m apart at 10 m, so single pairs can regress
    gains = _alignment_gains(*_shifted(SensorSpec()))
    assert np.median(gains) > 0 and np.mean(gains > 0) >= 0.75


@pytest.fixture(scope="module")
def sim_pairs():
    static, dynamic = generate_paired_runs(make_world(seed=3), loop_path(60), SensorSpec())
    return static, dynamic, pair_runs(dynamic, static, PairThreshold(0.5, 5.0))


def _shifted(spec):
    """Static run recorded 0.28 m and 3 degrees away from the dynamic run's poses."""
    world = make_world(seed=3)
    path = loop_path(30)
    offset = Pose.from_xyz_yaw(0.2, -0.2, 0.0, np.radians(3.0))
    moved = [Pose(compose(q, offset).rotation, compose(q, offset).translation, q.timestamp) for q in path]
    _, dynamic = generate_paired_runs(world, path, spec)
    static, _ = generate_paired_runs(world, moved, spec)
    return static, dynamic, pair_runs(dynamic, static, PairThreshold(0.5, 5.0))
