"""Dockserver stand-in: a spool directory between a record feeder and a detector.

The feeder drops one sparse record per file into the spool directory, writing
to a temporary name and renaming so the consumer never sees a partial file.
File names carry a zero-padded sequence number, which is the arrival order.

The consumer keeps ``consumed.log`` next to its outputs, one spool file name
per line, appended only after the file's events reached ``events.log``. On
restart it replays the files already listed, without logging, to rebuild the
estimator and detector, so no event is ever written twice. A crash between
the event append and the ledger append is caught on replay by comparing
against the lines already in ``events.log``.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data_io.records import SparseStream, format_sparse, parse_sparse, to_utc
from .detector import DetectionConfig, DetectionResult, Detector, f_m_at, report
from .errors import GliderAnomalyError
from .estimator import EstimateSeries, OnlineEstimator

log = logging.getLogger(__name__)

SPOOL_PREFIX = "rec-"
SPOOL_SUFFIX = ".csv"
LEDGER = "consumed.log"
EVENT_LOG = "events.log"


def spool_name(i: int) -> str:
    return f"{SPOOL_PREFIX}{i:06d}{SPOOL_SUFFIX}"


def _atomic_write(path: str, text: str):
    tmp = os.path.join(os.path.dirname(path), "." + os.path.basename(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _append_line(path: str, line: str):
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


class Feeder:
    """Writes the records of a sparse stream into the spool, one per tick.

    Files already present are left alone, so a restarted feeder resumes where
    the previous one stopped.
    """

    def __init__(self, stream: SparseStream, spool_dir: str, cadence: float = 0.0, realtime: bool = False):
        if not cadence >= 0:
            raise ValueError("cadence must be >= 0")
        self.stream = stream
        self.spool_dir = spool_dir
        self.cadence = cadence
        self.realtime = realtime
        os.makedirs(spool_dir, exist_ok=True)

    def emit(self, i: int) -> bool:
        """Spool record ``i``; False if it was already there."""
        path = os.path.join(self.spool_dir, spool_name(i))
        if os.path.exists(path):
            return False
        one = SparseStream([self.stream.records[i]], epoch=self.stream.epoch, frame=self.stream.frame)
        _atomic_write(path, format_sparse(one))
        return True

    def ticks(self, limit: int | None = None):
        """Generator: spool one record per tick, yielding its index."""
        n = len(self.stream) if limit is None else min(limit, len(self.stream))
        for i in range(n):
            if i and self.realtime and self.cadence > 0:
                time.sleep(self.cadence)
            self.emit(i)
            yield i


def format_event_line(ev, epoch) -> str:
    p = "nan" if math.isnan(ev.p_e) else repr(ev.p_e)
    return f"{to_utc(epoch, ev.t)} t={ev.t!r} {ev.kind} v_l={ev.v_l!r} p_e={p} {ev.detail}"


@dataclass
class Consumer:
    """Consumes spool files exactly once, in sequence order."""

    spool_dir: str
    out_dir: str
    estimator: OnlineEstimator
    detection: DetectionConfig
    epoch: str | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        os.makedirs(self.out_dir, exist_ok=True)
        self.detector = Detector(self.detection)
        self.consumed: list[str] = []
        self._seen: set[str] = set()
        self._parts: list[EstimateSeries] = []
        self._p_e = []
        self._f_m = []
        open(self.event_log_path, "a", encoding="utf-8").close()
        self._replay()

    @property
    def ledger_path(self):
        return os.path.join(self.out_dir, LEDGER)

    @property
    def event_log_path(self):
        return os.path.join(self.out_dir, EVENT_LOG)

    def _replay(self):
        if not os.path.exists(self.ledger_path):
            return
        with open(self.ledger_path, encoding="utf-8") as fh:
            names = [ln.strip() for ln in fh if ln.strip()]
        for name in names:
            self._process(name, live=False)
        logged = 0
        if os.path.exists(self.event_log_path):
            with open(self.event_log_path, encoding="utf-8") as fh:
                logged = sum(1 for ln in fh if ln.strip())
        for ev in self.detector.events[logged:]:
            _append_line(self.event_log_path, format_event_line(ev, self.epoch))

    def pending(self) -> list[str]:
        try:
            names = os.listdir(self.spool_dir)
        except FileNotFoundError:
            return []
        return sorted(n for n in names
                      if n.startswith(SPOOL_PREFIX) and n.endswith(SPOOL_SUFFIX) and n not in self._seen)

    def poll(self) -> list:
        """Consume every pending spool file; returns the new events."""
        new = []
        for name in self.pending():
            new.extend(self._process(name, live=True))
        return new

    def _process(self, name: str, live: bool):
        self._seen.add(name)
        path = os.path.join(self.spool_dir, name)
        events = []
        try:
            with open(path, "rb") as fh:
                stream = parse_sparse(fh.read(), path=path)
            if self.epoch is None:
                self.epoch = stream.epoch
            for rec in stream.records:
                chunk = self.estimator.extend(rec)
                f_m = f_m_at(chunk.t, [rec])
                evs, p_e = self.detector.feed(chunk.t, chunk.v_l, chunk.f_l, f_m)
                self._parts.append(chunk)
                self._p_e.append(p_e)
                self._f_m.append(f_m)
                events.extend(evs)
        except (GliderAnomalyError, OSError) as exc:
            msg = f"skipping spool file {name}: {exc}"
            if live:
                log.warning(msg)
            self.warnings.append(msg)
        if live:
            for ev in events:
                _append_line(self.event_log_path, format_event_line(ev, self.epoch))
            _append_line(self.ledger_path, name)
        self.consumed.append(name)
        return events

    @property
    def series(self) -> EstimateSeries:
        return EstimateSeries.concat(self._parts)

    def result(self) -> DetectionResult:
        p_e = np.concatenate(self._p_e) if self._p_e else np.empty(0)
        f_m = np.concatenate(self._f_m) if self._f_m else np.empty((0, 2))
        return DetectionResult(list(self.detector.events), p_e, f_m)

    def write_report(self, meta=None):
        return report(self.detector.events, self.series, self.detection, self.out_dir,
                      self.result(), epoch=self.epoch, meta=meta)


def replay(stream: SparseStream, spool_dir: str, consumer: Consumer, cadence: float = 0.0,
           realtime: bool = False, limit: int | None = None) -> Consumer:
    """Run feeder and consumer as two interleaved tasks in this process."""
    feeder = Feeder(stream, spool_dir, cadence, realtime)
    for _ in feeder.ticks(limit):
        consumer.poll()
    consumer.poll()
    return consumer

