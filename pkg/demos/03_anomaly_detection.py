"""
Catching a speed drop and filtering false alarms
================================================

At 72 h something starts dragging the glider and its speed drops by 40%.
The detector flags the moment the speed estimate leaves [0.15, 0.25] m/s, then
compares the glider's own flow estimate with the observer's to decide whether
the alarm can be trusted.
"""

import math
import tempfile

import numpy as np

from glider_anomaly.data_io.config import from_dict
from glider_anomaly.detector import DetectionConfig, analyze, report
from glider_anomaly.estimator import run_offline
from glider_anomaly.simulator import AnomalyInjection, simulate, to_dense_records, to_sparse_records

cfg = from_dict({})
t_a = 72 * 3600.0
truth = simulate(cfg.sim, [AnomalyInjection("speed_degradation", t_a, math.inf, 0.6)])
series, _ = run_offline(to_dense_records(truth), cfg.gains, cfg.basis)

# the sparse records carry the glider's dead-reckoned flow, one value per dive
sparse = to_sparse_records(truth, cfg.sim)
result = analyze(series, sparse, cfg.detection)
for ev in result.events:
    print(f"{ev.kind} at {ev.t / 3600:.2f} h (injected at 72 h), v_l {ev.v_l:.3f}, p_e {ev.p_e:.3f}")
print("exit code", result.exit_code)

# the two flow estimates agree, so p_e stays well below 1 along the run
print(f"p_e: median {np.nanmedian(result.p_e):.3f}, max {np.nanmax(result.p_e):.3f}")

# with a stricter threshold the same alarm would be dismissed
strict = DetectionConfig(gamma_f=0.3, burn_in=cfg.detection.burn_in)
print("with gamma_f 0.3:", [e.kind for e in analyze(series, sparse, strict).events])

# the report bundle: a summary plus CSV series for any plotting tool
out = tempfile.mkdtemp(prefix="glider-report-")
files = report(result.events, series, cfg.detection, out, result, epoch=cfg.sim.epoch)
print(files.summary)
print("files:", sorted(files.files))
