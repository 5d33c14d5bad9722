"""Speed-band anomaly test with a flow-discrepancy false-alarm filter.

An alarm is raised when the estimated through-water speed leaves
``[v_min, v_max]`` for at least ``debounce`` seconds. At the first violating
sample the glider's own dead-reckoned flow ``f_m`` is compared with the
observer's flow ``f_l``::

    p_e = |f_m - f_l| / (2 * max(f_l_max, f_m_max))

where the maxima are running maxima of the two flow magnitudes up to that
sample. If ``p_e > gamma_f`` the two flow estimates disagree badly, the speed
estimate cannot be trusted and the alarm is reported as a false alarm.

:class:`Detector` is causal and keeps its own state, so feeding a series in
chunks yields exactly the events of a single pass.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

EVENT_KINDS = ("anomaly", "false_alarm", "recovered")
DEFAULT_DEBOUNCE = 1800.0
DEFAULT_BURN_IN_FRACTION = 0.1


@dataclass(frozen=True)
class DetectionConfig:
    v_min: float = 0.15
    v_max: float = 0.25
    gamma_f: float = 1.0
    debounce: float = DEFAULT_DEBOUNCE
    burn_in: float = 0.0  # seconds after the first sample

    def __post_init__(self):
        for name in ("v_min", "v_max", "gamma_f", "debounce", "burn_in"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError("must be finite", name)
        if not self.v_min > 0:
            raise ConfigurationError(f"must be > 0, got {self.v_min}", "v_min")
        if not self.v_min < self.v_max:
            raise ConfigurationError(f"v_min {self.v_min} must be below v_max {self.v_max}", "v_min")
        if not self.gamma_f > 0:
            raise ConfigurationError(f"must be > 0, got {self.gamma_f}", "gamma_f")
        if self.debounce < 0:
            raise ConfigurationError(f"must be >= 0, got {self.debounce}", "debounce")
        if self.burn_in < 0:
            raise ConfigurationError(f"must be >= 0, got {self.burn_in}", "burn_in")


@dataclass(frozen=True)
class DetectionEvent:
    t: float
    kind: str
    v_l: float
    p_e: float  # nan when no glider flow covered the trigger time
    detail: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def __eq__(self, other):
        # nan-aware so parsed events compare equal to the originals
        if not isinstance(other, DetectionEvent):
            return NotImplemented
        return (self.t, self.kind, self.detail) == (other.t, other.kind, other.detail) and all(
            a == b or (math.isnan(a) and math.isnan(b))
            for a, b in ((self.v_l, other.v_l), (self.p_e, other.p_e))
        )

    def __hash__(self):
        return hash((self.t, self.kind, self.detail))


def compute_p_e(f_m, f_l, f_l_max: float, f_m_max: float) -> float:
    """Normalised disagreement between glider and observer flow, in [0, 1] when the maxima bound both."""
    denom = 2.0 * max(f_l_max, f_m_max)
    if denom == 0:
        log.warning("both running flow maxima are zero; p_e taken as 0")
        return 0.0
    return math.hypot(f_m[0] - f_l[0], f_m[1] - f_l[1]) / denom


def _segment_table(segments):
    """Normalise F_M segments to arrays (t_start, t_end, f_m).

    Accepts simulator ``SegmentFlow`` items, ``SparseRecord`` items, a
    ``SparseStream`` or plain ``(t_start, t_end, (u, v))`` tuples.
    """
    items = getattr(segments, "records", segments)
    rows = []
    for s in items:
        if hasattr(s, "segment_start_t"):
            rows.append((s.segment_start_t, s.segment_end_t, s.f_m[0], s.f_m[1]))
        elif hasattr(s, "t_start"):
            rows.append((s.t_start, s.t_end, s.f_m[0], s.f_m[1]))
        else:
            t0, t1, fm = s
            rows.append((t0, t1, fm[0], fm[1]))
    if not rows:
        return np.empty(0), np.empty(0), np.empty((0, 2))
    a = np.array(rows, dtype=float)
    order = np.argsort(a[:, 0], kind="stable")
    a = a[order]
    return a[:, 0], a[:, 1], a[:, 2:]


def f_m_at(times, segments) -> np.ndarray:
    """Glider flow held constant over each segment; nan rows where no segment covers ``t``.

    Segments are half-open ``[start, end)`` except that the end of the last
    segment is included, so a dense series ending at the final surfacing is
    fully covered.
    """
    times = np.asarray(times, dtype=float)
    t0, t1, fm = _segment_table(segments)
    out = np.full((len(times), 2), np.nan)
    if len(t0) == 0:
        return out
    idx = np.searchsorted(t0, times, side="right") - 1
    ok = idx >= 0
    j = np.maximum(idx, 0)
    inside = ok & (times < t1[j])
    last = len(t0) - 1
    inside |= ok & (j == last) & (times == t1[last])
    out[inside] = fm[j[inside]]
    return out


class Detector:
    """Incremental detector; see module docstring for the semantics."""

    def __init__(self, cfg: DetectionConfig):
        self.cfg = cfg
        self.events: list[DetectionEvent] = []
        self.f_l_max = 0.0
        self.f_m_max = 0.0
        self.t0 = None
        self.alarmed = False
        self._run_start = None  # (t, v_l, p_e) of the first sample of the current run
        self._warned_zero = False
        self._t_last = -math.inf

    def p_e_chunk(self, f_m, f_l) -> np.ndarray:
        """p_e for consecutive samples, carrying the running maxima across calls."""
        f_m = np.asarray(f_m, dtype=float).reshape(-1, 2)
        f_l = np.asarray(f_l, dtype=float).reshape(-1, 2)
        if len(f_l) == 0:
            return np.empty(0)
        nm = np.hypot(f_m[:, 0], f_m[:, 1])
        nl = np.hypot(f_l[:, 0], f_l[:, 1])
        max_m = np.maximum.accumulate(np.concatenate([[self.f_m_max], np.where(np.isnan(nm), 0.0, nm)]))[1:]
        max_l = np.maximum.accumulate(np.concatenate([[self.f_l_max], np.where(np.isnan(nl), 0.0, nl)]))[1:]
        self.f_m_max = float(max_m[-1])
        self.f_l_max = float(max_l[-1])
        denom = 2.0 * np.maximum(max_l, max_m)
        num = np.hypot(f_m[:, 0] - f_l[:, 0], f_m[:, 1] - f_l[:, 1])
        zero = denom == 0
        if zero.any() and not self._warned_zero:
            log.warning("both running flow maxima are zero; p_e taken as 0 there")
            self._warned_zero = True
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(zero, 0.0, num / np.where(zero, 1.0, denom))
        p[np.isnan(num)] = np.nan
        return p

    def feed(self, t, v_l, f_l, f_m) -> tuple[list[DetectionEvent], np.ndarray]:
        """Process the next samples; returns the newly confirmed events and their p_e."""
        t = np.asarray(t, dtype=float)
        v_l = np.asarray(v_l, dtype=float)
        p_e = self.p_e_chunk(f_m, f_l)
        if len(t) == 0:
            return [], p_e
        if t[0] <= self._t_last or np.any(np.diff(t) <= 0):
            raise ValueError("detector samples must be strictly increasing in time")
        self._t_last = float(t[-1])
        if self.t0 is None:
            self.t0 = float(t[0])
        cfg = self.cfg
        new = []
        start = self.t0 + cfg.burn_in
        for k in np.flatnonzero(t >= start):
            tk, vk, pk = float(t[k]), float(v_l[k]), float(p_e[k])
            outside = not (cfg.v_min <= vk <= cfg.v_max)
            if outside != self.alarmed:
                if self._run_start is None:
                    self._run_start = (tk, vk, pk)
                if tk - self._run_start[0] >= cfg.debounce:
                    new.append(self._confirm())
            else:
                self._run_start = None
        self.events.extend(new)
        return new, p_e

    def _confirm(self) -> DetectionEvent:
        t, v, p = self._run_start
        cfg = self.cfg
        self._run_start = None
        if self.alarmed:
            self.alarmed = False
            return DetectionEvent(t, "recovered", v, p, f"speed back inside [{cfg.v_min:g}; {cfg.v_max:g}]")
        self.alarmed = True
        side = "below v_min" if v < cfg.v_min else "above v_max"
        if math.isnan(p):
            return DetectionEvent(t, "anomaly", v, p, f"speed {side}; p_e unavailable (no glider flow)")
        if p > cfg.gamma_f:
            return DetectionEvent(t, "false_alarm", v, p, f"speed {side} but p_e {p:.3f} > gamma_f {cfg.gamma_f:g}")
        return DetectionEvent(t, "anomaly", v, p, f"speed {side}; p_e {p:.3f}")


@dataclass
class DetectionResult:
    events: list
    p_e: np.ndarray
    f_m: np.ndarray  # glider flow aligned with the series samples

    @property
    def exit_code(self) -> int:
        return exit_code(self.events)


def analyze(series, f_m_per_segment, cfg: DetectionConfig) -> DetectionResult:
    f_m = f_m_at(series.t, f_m_per_segment)
    det = Detector(cfg)
    events, p_e = det.feed(series.t, series.v_l, series.f_l, f_m)
    return DetectionResult(events, p_e, f_m)


def detect(series, f_m_per_segment, cfg: DetectionConfig) -> list[DetectionEvent]:
    return analyze(series, f_m_per_segment, cfg).events


def exit_code(events) -> int:
    """0 nothing found, 2 at least one anomaly, 3 only false alarms."""
    kinds = {e.kind for e in events}
    if "anomaly" in kinds:
        return 2
    if "false_alarm" in kinds:
        return 3
    return 0


# -- report bundle -----------------------------------------------------------

@dataclass
class ReportFiles:
    summary: str
    files: dict = field(default_factory=dict)


def summary_text(events, series, cfg: DetectionConfig, epoch=None, meta=None) -> str:
    from .data_io.records import to_utc

    lines = ["glider anomaly detection report", ""]
    for k, v in (meta or {}).items():
        lines.append(f"{k}: {v}")
    if len(series):
        lines.append(f"samples: {len(series)} from {to_utc(epoch, series.t[0])} to {to_utc(epoch, series.t[-1])}")
        lines.append(f"max CLLE: {np.nanmax(series.clle):.2f} m")
    lines.append(f"speed band: [{cfg.v_min:g}, {cfg.v_max:g}] m/s, gamma_f {cfg.gamma_f:g}, "
                 f"debounce {cfg.debounce:g} s, burn-in {cfg.burn_in:g} s")
    lines.append("")
    if not any(e.kind in ("anomaly", "false_alarm") for e in events):
        lines.append("no anomaly detected")
    for e in events:
        p = "n/a" if math.isnan(e.p_e) else f"{e.p_e:.3f}"
        lines.append(f"{to_utc(epoch, e.t)}  {e.kind:<11} v_l={e.v_l:.4f} p_e={p}  {e.detail}")
    return "\n".join(lines) + "\n"


def report(events, series, cfg: DetectionConfig, out_dir, result: DetectionResult | None = None,
           epoch=None, meta=None) -> ReportFiles:
    """Write the summary and the plot series bundle into ``out_dir``."""
    from .data_io.records import Series, write_events, write_series

    os.makedirs(out_dir, exist_ok=True)
    t = series.t
    f_m = result.f_m if result is not None else np.full((len(t), 2), np.nan)
    meta = dict(meta or {})
    bundle = {
        "trajectory.csv": {"t": t, "x": series.x[:, 0], "y": series.x[:, 1],
                           "x_hat": series.x_hat[:, 0], "y_hat": series.x_hat[:, 1]},
        "clle.csv": {"t": t, "clle": series.clle},
        "flow.csv": {"t": t, "u_glider": f_m[:, 0], "u_algo": series.f_l[:, 0],
                     "v_glider": f_m[:, 1], "v_algo": series.f_l[:, 1]},
        "speed.csv": {"t": t, "v_l": series.v_l, "v_min": np.full(len(t), cfg.v_min),
                      "v_max": np.full(len(t), cfg.v_max)},
    }
    if result is not None:
        bundle["p_e.csv"] = {"t": t, "p_e": result.p_e}
    files = {}
    for name, cols in bundle.items():
        path = os.path.join(out_dir, name)
        write_series(path, Series(cols, epoch=epoch))
        files[name] = path
    path = os.path.join(out_dir, "events.csv")
    write_events(path, events, epoch)
    files["events.csv"] = path
    text = summary_text(events, series, cfg, epoch, meta)
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    files["summary.txt"] = path
    return ReportFiles(text, files)
