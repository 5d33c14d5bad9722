"""
Estimating flow and glider speed from a full-resolution record
==============================================================

A week-long synthetic deployment: the glider flies a square of waypoints at
0.20 m/s through a tidal flow. The observer sees only position and heading,
and recovers both the flow and the through-water speed.
"""

import numpy as np

from glider_anomaly.data_io.config import from_dict
from glider_anomaly.estimator import run_offline
from glider_anomaly.simulator import simulate, to_dense_records

# every field defaults to the Franklin deployment settings
cfg = from_dict({"seed": 0})
truth = simulate(cfg.sim)
dense = to_dense_records(truth)
print(f"{len(dense)} samples every {cfg.sim.dt:g} s over {cfg.sim.duration / 86400:g} days")

series, state = run_offline(dense, cfg.gains, cfg.basis)

# convergence day by day
err = np.hypot(*(series.f_l - truth.flow).T)
print("day  CLLE(m)  speed(m/s)  flow error(m/s)")
for day in range(8):
    k = min(int(day * 86400 / cfg.sim.dt), len(series) - 1)
    print(f"{day:3d}  {series.clle[k]:7.2f}  {series.v_l[k]:10.4f}  {err[k]:15.4f}")

# after a burn-in the speed estimate stays close to the true 0.20 m/s
after = series.t >= cfg.detection.burn_in
print(f"max |V_L - 0.20| after burn-in: {np.max(np.abs(series.v_l[after] - 0.2)):.4f}")
print(f"flow RMSE along the track: {np.sqrt(np.mean(err ** 2)):.4f} m/s")
print("final flow weights:\n", state.theta_hat)
