"""
Online detection from surfacing reports
=======================================

In the field only a short report arrives each time the glider surfaces, every
four hours. A feeder drops each report into a spool directory and a consumer
picks it up, extends the estimate and appends any new event to a live log.
"""

import math
import os
import tempfile

from glider_anomaly.data_io.config import from_dict
from glider_anomaly.estimator import OnlineEstimator
from glider_anomaly.online import Consumer, Feeder
from glider_anomaly.simulator import AnomalyInjection, simulate, to_sparse_records

cfg = from_dict({})
truth = simulate(cfg.sim, [AnomalyInjection("speed_degradation", 72 * 3600.0, math.inf, 0.6)])
sparse = to_sparse_records(truth, cfg.sim)

work = tempfile.mkdtemp(prefix="glider-online-")
spool, out = os.path.join(work, "spool"), os.path.join(work, "out")
estimator = OnlineEstimator(cfg.gains, cfg.basis, surfacing_interval=cfg.sim.surfacing_interval)
consumer = Consumer(spool, out, estimator, cfg.detection, epoch=sparse.epoch)

# one report per tick; the consumer polls after each
for i in Feeder(sparse, spool).ticks():
    for ev in consumer.poll():
        rec = sparse[i]
        print(f"report {i} (dive ending {rec.segment_end_t / 3600:.0f} h): {ev.kind} dated {ev.t / 3600:.2f} h")

print(open(consumer.event_log_path).read())

# a restarted consumer rebuilds its state from the ledger and logs nothing twice
again = Consumer(spool, out, OnlineEstimator(cfg.gains, cfg.basis, surfacing_interval=cfg.sim.surfacing_interval),
                 cfg.detection, epoch=sparse.epoch)
print("new events after restart:", again.poll())
print("speed estimate at the end:", round(float(again.series.v_l[-1]), 4))
