import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dslr.fileio import (atomic_write_bytes, cloud_to_bytes, mask_from_pbm, mask_to_pbm, read_cloud, read_pbm,
                         read_rimg, rimg_from_bytes, rimg_to_bytes, write_cloud, write_pbm, write_provenance,
                         write_rimg)
from dslr.scan import PointCloud, RangeImage, SensorSpec


def _image(seed=0, spec=SensorSpec()):
    rng = np.random.default_rng(seed)
    return RangeImage(spec, rng.uniform(1, 40, spec.shape), rng.random(spec.shape) < 0.7)


def test_rimg_layout():
    ri = _image()
    raw = rimg_to_bytes(ri)
    magic, version, H, W, lo, hi, mr = struct.unpack_from("<4sIIIfff", raw)
    assert (magic, version, H, W, lo, hi, mr) == (b"RIMG", 1, 16, 64, -15.0, 10.0, 50.0)
    assert len(raw) == 28 + 16 * 64 * 5
    assert np.array_equal(np.frombuffer(raw, "<f4", 16 * 64, 28).reshape(16, 64), ri.ranges)


def test_rimg_round_trip_with_mask(tmp_path):
    ri = _image(1)
    mask = np.random.default_rng(2).random(ri.shape) < 0.2
    write_rimg(tmp_path / "a.rimg", ri, mask)
    back, m = read_rimg(tmp_path / "a.rimg")
    assert back.same_as(ri) and np.array_equal(m, mask)
    assert rimg_to_bytes(back, m) == (tmp_path / "a.rimg").read_bytes()


@pytest.mark.parametrize("raw", [b"", b"XXXX" + bytes(24), rimg_to_bytes(_image())[:-3]])
def test_rimg_rejects_bad_input(raw):
    with pytest.raises(ValueError):
        rimg_from_bytes(raw)


def test_cloud_round_trip(tmp_path):
    c = PointCloud(np.random.default_rng(0).normal(size=(50, 3)).astype(np.float32), labels=[0, 1] * 25)
    write_cloud(tmp_path / "c.bin", c)
    back = read_cloud(tmp_path / "c.bin")
    assert np.array_equal(back.xyz, c.xyz) and np.array_equal(back.labels, c.labels)
    assert len(cloud_to_bytes(c)) == 50 * 16


def test_cloud_bad_size(tmp_path):
    (tmp_path / "bad.bin").write_bytes(bytes(17))
    with pytest.raises(ValueError):
        read_cloud(tmp_path / "bad.bin")


def test_kitti_mode_ignores_intensity(tmp_path):
    arr = np.array([[1, 2, 3, 0.37]], "<f4")
    (tmp_path / "k.bin").write_bytes(arr.tobytes())
    c = read_cloud(tmp_path / "k.bin", labeled=False)
    assert not c.is_labeled and np.allclose(c.xyz, [[1, 2, 3]])


@settings(max_examples=40)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 1000))
def test_pbm_round_trip(h, w, seed):
    mask = np.random.default_rng(seed).random((h, w)) < 0.5
    assert np.array_equal(mask_from_pbm(mask_to_pbm(mask)), mask)


def test_pbm_comments_and_files(tmp_path):
    assert mask_from_pbm(b"P4\n# note\n3 1\n\xa0").tolist() == [[True, False, True]]
    write_pbm(tmp_path / "m.pbm", np.eye(3, dtype=bool))
    assert np.array_equal(read_pbm(tmp_path / "m.pbm"), np.eye(3, dtype=bool))
    with pytest.raises(ValueError):
        mask_from_pbm(b"P1\n1 1\n1")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_bytes(tmp_path / "sub" / "x", b"abc")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x"]


def test_provenance_sidecar(tmp_path):
    write_provenance(tmp_path / "out.csv", {"seed": 3})
    assert json.loads((tmp_path / "out.csv.prov.json").read_text()) == {"seed": 3}
