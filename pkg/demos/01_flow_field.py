"""
A tidal flow field from four radial basis functions
===================================================

The observer models the depth-averaged current as a weighted sum of basis
functions, each a spatial bump times a slow cosine in time.
"""

import math

import numpy as np

from glider_anomaly.flow_field import (
    BasisSet, FlowParameters, coverage_check, eval_basis, eval_flow, random_flow,
)

# four functions on a 2x2 grid over a 6 km box, 13 km wide, period ~11.6 days
bbox = (0.0, 0.0, 6000.0, 6000.0)
basis = BasisSet.grid(bbox, sigma=13e3)
print(len(basis), "functions centred at", [bf.center for bf in basis])

# one weight per function and per velocity component
rng = np.random.default_rng(0)
flow = random_flow(basis, rng, max_speed=0.15, region=bbox)
print("theta =\n", flow.theta)

# evaluate on a coarse grid at t = 0 and a day later
xs = np.linspace(0, 6000, 4)
pts = np.array([(x, y) for y in xs for x in xs])
for t in (0.0, 86400.0):
    uv = eval_flow(flow, basis, pts, np.full(len(pts), t))
    speed = np.hypot(uv[:, 0], uv[:, 1])
    print(f"t = {t / 3600:4.0f} h  mean speed {speed.mean():.3f} m/s, max {speed.max():.3f} m/s")

# the field is periodic: one full period later nothing has changed
period = 2 * math.pi / basis[0].omega
p0 = eval_basis(basis, (1000.0, 2000.0), 5000.0)
p1 = eval_basis(basis, (1000.0, 2000.0), 5000.0 + period)
print("periodic to", np.max(np.abs(p0 - p1)))

# a trajectory far from every centre sees almost no basis support
track = np.column_stack([np.linspace(0, 200e3, 50), np.zeros(50)])
report = coverage_check(basis, track)
print(f"coverage ok: {report.ok}, weakest support {report.worst:.2e}")
