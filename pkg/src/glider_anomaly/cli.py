"""Command-line entry point.

Exit status: 0 no anomaly, 1 error, 2 at least one anomaly, 3 false alarms only.
``simulate`` exits 0 on success. ``GLIDER_ANOMALY_OUT`` sets the default
output root when ``--out`` is omitted.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data_io import config as config_io
from .data_io.records import (
    Series, read_dense, read_sparse, write_dense, write_series, write_sparse,
)
from .detector import DetectionResult, Detector, analyze, exit_code, f_m_at, report
from .errors import GliderAnomalyError
from .estimator import OnlineEstimator, run_offline
from .online import Consumer, format_event_line, replay
from .simulator import simulate, to_dense_records, to_sparse_records

log = logging.getLogger("glider_anomaly")

EXIT_OK, EXIT_ERROR, EXIT_ANOMALY, EXIT_FALSE_ALARM = 0, 1, 2, 3
OUT_ENV = "GLIDER_ANOMALY_OUT"


def _out_dir(args, mode: str) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUT_ENV) or "glider-anomaly-out"
    return os.path.join(root, mode)


def _config(args):
    cfg = config_io.load_config(args.config) if args.config else config_io.from_dict({})
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return config_io.override(
        cfg,
        v_min=getattr(args, "v_min", None),
        v_max=getattr(args, "v_max", None),
        gamma_f=getattr(args, "gamma_f", None),
    )


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(out_dir, mode, cfg, args, inputs, outputs):
    man = {
        "tool": f"glider-anomaly {__version__}",
        "scenario": cfg.scenario,
        "mode": mode,
        "config_path": args.config,
        "inputs": inputs,
        "output_dir": out_dir,
        "rng_seed": cfg.seed,
        "outputs": {name: _sha256(os.path.join(out_dir, name)) for name in sorted(outputs)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_event_log(path, events, epoch):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(format_event_line(ev, epoch) + "\n")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "simulate")
    os.makedirs(out, exist_ok=True)
    gt = simulate(cfg.sim, cfg.injections)
    write_dense(os.path.join(out, "dense.csv"), to_dense_records(gt))
    write_sparse(os.path.join(out, "sparse.csv"), to_sparse_records(gt, cfg.sim))
    meta = {f"injection_{i}": f"{inj.kind} {inj.t_start!r} {inj.t_end!r} {inj.magnitude!r}"
            for i, inj in enumerate(cfg.injections)}
    truth = Series({
        "t": gt.times, "x": gt.positions[:, 0], "y": gt.positions[:, 1], "heading": gt.headings,
        "speed": gt.speed, "flow_u": gt.flow[:, 0], "flow_v": gt.flow[:, 1],
        "anomaly": gt.anomaly.astype(float),
    }, epoch=cfg.sim.epoch, meta=meta)
    write_series(os.path.join(out, "truth.csv"), truth)
    config_io.dump_config(cfg, os.path.join(out, "config.json"))
    _manifest(out, "simulate", cfg, args, {},
              ["dense.csv", "sparse.csv", "truth.csv", "config.json"])
    print(f"wrote {len(gt)} dense samples and {len(gt.segments)} surfacing records to {out}")
    return EXIT_OK


def _finish(out, mode, cfg, args, inputs, series, result, epoch) -> int:
    meta = {"scenario": cfg.scenario, "mode": mode}
    files = report(result.events, series, cfg.detection, out, result, epoch=epoch, meta=meta)
    write_series(os.path.join(out, "series.csv"), series.to_series(epoch=epoch))
    _write_event_log(os.path.join(out, "events.log"), result.events, epoch)
    _manifest(out, mode, cfg, args, inputs, list(files.files) + ["series.csv", "events.log"])
    sys.stdout.write(files.summary)
    return exit_code(result.events)


def cmd_detect_offline(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "offline")
    dense = read_dense(args.dense)
    sparse = read_sparse(args.sparse)
    os.makedirs(out, exist_ok=True)
    series, _ = run_offline(dense, cfg.gains, cfg.basis)
    result = analyze(series, sparse, cfg.detection)
    inputs = {"dense": args.dense, "sparse": args.sparse}
    return _finish(out, "offline", cfg, args, inputs, series, result, dense.epoch)


def _online_estimator(cfg, sparse) -> OnlineEstimator:
    si = sparse.records[0].duration if len(sparse) else None
    return OnlineEstimator(cfg.gains, cfg.basis, dt=cfg.online_dt, surfacing_interval=si,
                           turn_window=cfg.turn_window)


def cmd_detect_online(args) -> int:
    """One-shot online pass: every record is fed in order with no spool in between."""
    cfg = _config(args)
    out = _out_dir(args, "online")
    sparse = read_sparse(args.sparse)
    os.makedirs(out, exist_ok=True)
    est = _online_estimator(cfg, sparse)
    det = Detector(cfg.detection)
    p_e, f_m = [], []
    for rec in sparse.records:
        chunk = est.extend(rec)
        fm = f_m_at(chunk.t, [rec])
        p_e.append(det.feed(chunk.t, chunk.v_l, chunk.f_l, fm)[1])
        f_m.append(fm)
    for w in est.warnings:
        log.warning(w)
    result = DetectionResult(det.events, np.concatenate(p_e) if p_e else np.empty(0),
                             np.concatenate(f_m) if f_m else np.empty((0, 2)))
    return _finish(out, "online", cfg, args, {"sparse": args.sparse}, est.series, result, sparse.epoch)


def cmd_replay_online(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "replay-online")
    sparse = read_sparse(args.sparse)
    os.makedirs(out, exist_ok=True)
    spool = args.spool or os.path.join(out, "spool")
    consumer = Consumer(spool, out, _online_estimator(cfg, sparse), cfg.detection, epoch=sparse.epoch)
    replay(sparse, spool, consumer, cadence=args.cadence, realtime=args.realtime, limit=args.max_records)
    for w in consumer.warnings:
        log.warning(w)
    meta = {"scenario": cfg.scenario, "mode": "online"}
    series = consumer.series
    result = consumer.result()
    files = report(result.events, series, cfg.detection, out, result, epoch=consumer.epoch, meta=meta)
    write_series(os.path.join(out, "series.csv"), series.to_series(epoch=consumer.epoch))
    _manifest(out, "replay-online", cfg, args, {"sparse": args.sparse, "spool": spool},
              list(files.files) + ["series.csv", "events.log"])
    sys.stdout.write(files.summary)
    return exit_code(result.events)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glider-anomaly", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, detection=True):
        sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<mode>)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if detection:
            sp.add_argument("--v-min", type=float, dest="v_min")
            sp.add_argument("--v-max", type=float, dest="v_max")
            sp.add_argument("--gamma-f", type=float, dest="gamma_f")

    sp = sub.add_parser("simulate", help="generate a synthetic deployment")
    common(sp, detection=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("detect-offline", help="hindcast detection on a dense record file")
    sp.add_argument("dense")
    sp.add_argument("sparse", help="sparse record file supplying the glider flow")
    common(sp)
    sp.set_defaults(func=cmd_detect_offline)

    sp = sub.add_parser("detect-online", help="one-shot online detection on a sparse record file")
    sp.add_argument("sparse")
    common(sp)
    sp.set_defaults(func=cmd_detect_online)

    sp = sub.add_parser("replay-online", help="replay a sparse file through the spool directory")
    sp.add_argument("sparse")
    common(sp)
    sp.add_argument("--cadence", type=float, default=0.0, help="seconds per record (default 0)")
    sp.add_argument("--realtime", action="store_true", help="sleep --cadence seconds between records")
    sp.add_argument("--spool", help="spool directory (default <out>/spool)")
    sp.add_argument("--max-records", type=int, dest="max_records",
                    help="stop the feeder after this many records, as if it were killed")
    sp.set_defaults(func=cmd_replay_online)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "cadence", 0.0) < 0:
        print("error: --cadence must be >= 0", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (GliderAnomalyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - exit codes must be total
        log.debug("unexpected failure", exc_info=True)
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
