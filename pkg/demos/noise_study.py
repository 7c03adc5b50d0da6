"""Train the scan-quality regressor, then inject growing range noise into
held-out scans and watch Chamfer error and the quality score rise together.
Writes noise_sweep.csv and two SVG charts into OUT_DIR (default: sweep/)."""

import sys

from dslr.lqi import LqiConfig, train_lqi
from dslr.scan import SensorSpec
from dslr.sim import generate_paired_runs, loop_path, make_world
from dslr.study import noise_sweep, summarize, write_sweep

out = sys.argv[1] if len(sys.argv) > 1 else "sweep"
static, _ = generate_paired_runs(make_world(seed=0), loop_path(200), SensorSpec())
model = train_lqi(static.scans[::2], LqiConfig())
rows = noise_sweep(static.scans[1::10], [k / 100 for k in range(11)], model)
s = summarize(rows)

print("sigma   median CD   median LQI")
for sig, cd, q in zip(s["sigma"], s["median_cd"], s["median_lqi"]):
    print(f"{sig:5.2f}   {cd:9.4f}   {q:10.4f}")
print(f"Spearman(LQI, CD) = {s['spearman_lqi_cd']:.3f}, Spearman(sigma, LQI) = {s['spearman_sigma_lqi']:.3f}")
for path in write_sweep(out, rows):
    print("wrote", path)
