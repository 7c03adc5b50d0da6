import csv
import io

import numpy as np
import pytest

from dslr.lqi import LqiConfig, train_lqi
from dslr.scan import SensorSpec
from dslr.sim import generate_paired_runs, loop_path, make_world
from dslr.study import SWEEP_COLUMNS, noise_sweep, summarize, sweep_csv, write_sweep

SIGMAS = (0.0, 0.02, 0.05, 0.1)


@pytest.fixture(scope="module")
def sweep():
    static, _ = generate_paired_runs(make_world(seed=6), loop_path(90), SensorSpec())
    model = train_lqi(static.scans[::2], LqiConfig())
    return noise_sweep(static.scans[1::9], SIGMAS, model, seeds=(0, 1))


def test_zero_sigma_rows_have_zero_cd(sweep):
    zero = [r for r in sweep if r["sigma"] == 0.0]
    assert zero and all(r["cd_raw"] == 0.0 and r["cd_normalized"] == 0.0 for r in zero)


def test_row_count_and_order(sweep):
    assert len(sweep) == 10 * len(SIGMAS) * 2
    assert [r["sigma"] for r in sweep[:8]] == [0.0, 0.0, 0.02, 0.02, 0.05, 0.05, 0.1, 0.1]


def test_median_cd_grows_with_sigma(sweep):
    s = summarize(sweep)
    assert s["sigma"] == list(SIGMAS)
    assert all(b >= a for a, b in zip(s["median_cd"], s["median_cd"][1:]))
    assert s["spearman_lqi_cd"] > 0


def test_outputs(sweep, tmp_path):
    paths = write_sweep(tmp_path, sweep)
    assert [p.name for p in paths] == ["noise_sweep.csv", "lqi_vs_cd.svg", "cd_vs_sigma.svg"]
    rows = list(csv.DictReader(io.StringIO(paths[0].read_text())))
    assert tuple(rows[0]) == SWEEP_COLUMNS and len(rows) == len(sweep)
    assert float(rows[5]["cd_normalized"]) == sweep[5]["cd_normalized"]
    for p in paths[1:]:
        assert p.read_text().lstrip().startswith("<svg")
    assert sweep_csv(sweep) == paths[0].read_text()


def test_sweep_rejects_bad_input(sweep):
    with pytest.raises(ValueError):
        noise_sweep([], SIGMAS, None)
    static, _ = generate_paired_runs(make_world(seed=6), loop_path(3), SensorSpec())
    with pytest.raises(ValueError):
        noise_sweep(static.scans, [-0.1], None)


def test_sweep_is_deterministic():
    static, _ = generate_paired_runs(make_world(seed=6), loop_path(6), SensorSpec())
    model = train_lqi(static.scans, LqiConfig(epochs=1))
    a = noise_sweep(static.scans, (0.0, 0.05), model)
    b = noise_sweep(static.scans, (0.0, 0.05), model)
    assert sweep_csv(a) == sweep_csv(b)
    assert np.isfinite([r["lqi"] for r in a]).all()
