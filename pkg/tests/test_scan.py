import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dslr.geometry import Pose
from dslr.scan import (DYNAMIC, STATIC, PointCloud, RangeImage, SensorSpec, add_noise, blend, crop_rows, deproject,
                       from_vector, project, to_vector, transform)

DESK = SensorSpec()


def one_row(n_az=4):
    return SensorSpec(1, n_az, (-5.0, 5.0), 100.0)


def test_single_point_on_axis():
    ri = project(PointCloud([[1, 0, 0]]), one_row())
    assert ri.occupied[0, 0] and ri.occupied.sum() == 1
    assert ri.ranges[0, 0] == 1.0


def test_empty_cloud_gives_empty_image():
    assert not project(PointCloud(), DESK).occupied.any()


def test_cell_holds_mean_range():
    ri = project(PointCloud([[2, 0, 0], [4, 0, 0]]), one_row())
    assert ri.ranges[0, 0] == 3.0


def test_points_outside_view_dropped():
    spec = one_row()
    ri = project(PointCloud([[200, 0, 0], [1, 0, 5], [0, 0, 0]]), spec)
    assert not ri.occupied.any()


def test_boundary_point_goes_to_lower_bin():
    # 90 degrees is the edge between azimuth bins 0 and 1 of a 4-bin ring
    ri = project(PointCloud([[0.0, 3.0, 0.0]]), one_row())
    assert ri.occupied[0, 0] and not ri.occupied[0, 1]


def test_dynamic_mask_from_labels():
    cloud = PointCloud([[2, 0.1, 0], [4, 0.1, 0], [0.1, 3, 0]], labels=[STATIC, DYNAMIC, STATIC])
    _, mask = project(cloud, one_row(), return_mask=True)
    assert mask[0, 0] and not mask[0, 1]


def test_unlabeled_cloud_has_no_mask():
    _, mask = project(PointCloud([[1, 0, 0]]), one_row(), return_mask=True)
    assert mask is None


def test_deproject_empty_and_single_cell():
    spec = SensorSpec(1, 4, (-5.0, 5.0), 100.0)
    assert len(deproject(RangeImage.empty(spec))) == 0
    ranges = np.zeros((1, 4), np.float32)
    occ = np.zeros((1, 4), bool)
    ranges[0, 0], occ[0, 0] = 7.0, True
    pts = deproject(RangeImage(spec, ranges, occ)).xyz
    az = spec.azimuth_centers()[0]
    assert np.allclose(pts, [[7 * np.cos(az), 7 * np.sin(az), 0.0]])


@st.composite
def range_images(draw, spec=DESK):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    occ = rng.random(spec.shape) < draw(st.floats(0, 1))
    ranges = rng.uniform(0.5, spec.max_range, size=spec.shape).astype(np.float32)
    return RangeImage(spec, ranges, occ)


@settings(max_examples=60, deadline=None)
@given(range_images())
def test_project_deproject_round_trip_is_exact(ri):
    back = project(deproject(ri), ri.spec)
    assert np.array_equal(back.occupied, ri.occupied)
    assert np.array_equal(back.ranges, ri.ranges)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_cloud_fixed_point(seed):
    cloud = PointCloud(np.random.default_rng(seed).uniform(-40, 40, size=(500, 3)))
    ri = project(cloud, DESK)
    ri.validate()
    again = project(deproject(ri), DESK)
    assert np.array_equal(again.ranges, ri.ranges) and np.array_equal(again.occupied, ri.occupied)


def test_crop_keep_all_is_identity():
    ri = project(PointCloud(np.random.default_rng(0).normal(size=(300, 3)) * 10), DESK)
    out = crop_rows(ri, 0, 16)
    assert out.spec == ri.spec and np.array_equal(out.ranges, ri.ranges)


def test_crop_64_row_sensor_to_40_rows():
    spec = SensorSpec(64, 512, (-25.0, 3.0), 120.0)
    assert crop_rows(RangeImage.empty(spec), 12, 52).shape == (40, 512)


def test_crop_rescales_fov_to_bin_edges():
    ri = RangeImage.empty(DESK)
    out = crop_rows(ri, 2, 14)
    step = 25.0 / 16
    assert out.shape == (12, 64)
    assert out.spec.elevation_fov == pytest.approx((10.0 - 14 * step, 10.0 - 2 * step))
    # rows keep their elevation centers
    assert np.allclose(out.spec.elevation_centers(), DESK.elevation_centers()[2:14])


def test_crop_rejects_empty_interval():
    with pytest.raises(ValueError):
        crop_rows(RangeImage.empty(DESK), 5, 5)


def test_to_vector_normalizes_and_fills():
    spec = SensorSpec(1, 2, (-5.0, 5.0), 100.0)
    ri = RangeImage(spec, [[50.0, 9.0]], [[True, False]])
    assert list(to_vector(ri)) == [0.5, 0.0]
    assert list(to_vector(ri, fill=-1.0)) == [0.5, -1.0]


@settings(max_examples=40, deadline=None)
@given(range_images())
def test_vector_round_trip(ri):
    back = from_vector(to_vector(ri), ri.spec, ri.occupied)
    assert np.array_equal(back.occupied, ri.occupied)
    assert np.allclose(back.ranges, ri.ranges, rtol=2e-7)


def test_from_vector_length_checked():
    with pytest.raises(ValueError):
        from_vector(np.zeros(10), DESK, np.ones(DESK.shape, bool))


def test_from_vector_drops_zero_cells():
    occ = np.ones((1, 2), bool)
    out = from_vector([0.0, 1.5], SensorSpec(1, 2, (-5.0, 5.0), 10.0), occ)
    assert list(out.occupied[0]) == [False, True] and out.ranges[0, 1] == 10.0


def test_blend_examples():
    spec = SensorSpec(1, 2, (-5.0, 5.0), 10.0)
    s = RangeImage(spec, [[5.0, 7.0]], [[True, True]])
    d = RangeImage(spec, [[2.0, 3.0]], [[True, True]])
    assert list(blend(np.array([[1, 0]]), s, d).ranges[0]) == [5.0, 3.0]
    assert blend(np.zeros((1, 2)), s, d).same_as(d)
    assert blend(np.ones((1, 2)), s, d).same_as(s)
    with pytest.raises(ValueError):
        blend(np.ones((2, 2)), s, d)


@settings(max_examples=40, deadline=None)
@given(range_images(), range_images(), st.integers(0, 1000))
def test_blend_never_mixes(a, b, seed):
    mask = np.random.default_rng(seed).random(DESK.shape) < 0.5
    out = blend(mask, a, b)
    from_a = (out.ranges == a.ranges) & (out.occupied == a.occupied)
    from_b = (out.ranges == b.ranges) & (out.occupied == b.occupied)
    assert np.all(np.where(mask, from_a, from_b))


def test_transform_keeps_labels():
    c = PointCloud([[1, 0, 0]], labels=[DYNAMIC])
    out = transform(c, Pose(translation=[0, 1, 0]))
    assert np.allclose(out.xyz, [[1, 1, 0]]) and out.labels[0] == DYNAMIC


def test_noise_zero_sigma_and_determinism():
    ri = project(PointCloud(np.random.default_rng(3).normal(size=(400, 3)) * 10), DESK)
    assert add_noise(ri, 0.0).same_as(ri)
    a, b = add_noise(ri, 0.05, seed=9), add_noise(ri, 0.05, seed=9)
    assert np.array_equal(a.ranges, b.ranges)
    assert np.array_equal(a.occupied, ri.occupied)
    with pytest.raises(ValueError):
        add_noise(ri, -1.0)


def test_noise_variance_matches_sigma():
    spec = SensorSpec(128, 128, (-15.0, 10.0), 100.0)
    ri = RangeImage(spec, np.full(spec.shape, 50.0, np.float32), np.ones(spec.shape, bool))
    sigma = 0.02
    diff = to_vector(add_noise(ri, sigma, seed=1)) - to_vector(ri)
    assert diff.size >= 10_000
    assert abs(diff.var() / sigma**2 - 1.0) < 0.05


def test_invalid_sensor_specs():
    for kwargs in ({"n_elevation_bins": 0}, {"elevation_fov": (5, 5)}, {"max_range": 0}):
        with pytest.raises(ValueError):
            SensorSpec(**kwargs)
