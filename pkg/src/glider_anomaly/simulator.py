"""Synthetic glider deployments with known ground truth.

The horizontal kinematics are integrated with explicit Euler::

    x[k+1] = x[k] + dt * (F(x[k], t[k]) + V[k] * (cos psi[k], sin psi[k]))

Headings are angles from east, counter-clockwise (mathematical convention),
matching the east/north local frame used everywhere else. Waypoint plans
re-aim at every surfacing; schedule plans are looked up every step. Either way
the actual heading slews toward the target at a bounded turn rate, because an
instantaneous jump kicks the speed estimate far harder than any real autopilot
turn would.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_io.geodesy import LocalFrame
from .data_io.records import DenseRecord, DenseStream, SparseRecord, SparseStream
from .errors import ConfigurationError, SimulationError
from .flow_field import BasisSet, FlowParameters, eval_flow

log = logging.getLogger(__name__)

SANITY_BOUND = 1e7  # metres
ANOMALY_KINDS = ("speed_degradation", "speed_dropout", "heading_disturbance")
DEFAULT_EPOCH = "2023-03-01T00:00:00Z"


@dataclass(frozen=True)
class HeadingPlan:
    """Heading schedule.

    Either ``waypoints`` (re-aimed at every surfacing, advancing to the next
    waypoint once inside ``capture_radius`` or past it along the leg) or an explicit piecewise-constant
    schedule given by ``times``/``headings`` (radians, east = 0).
    """

    waypoints: tuple = ()
    loop: bool = True
    capture_radius: float | None = None
    times: tuple = ()
    headings: tuple = ()

    def __post_init__(self):
        wps = tuple((float(x), float(y)) for x, y in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "headings", tuple(float(h) for h in self.headings))
        if bool(wps) == bool(self.headings):
            raise ConfigurationError("give either waypoints or a heading schedule", "heading_plan")
        if self.headings:
            if len(self.times) != len(self.headings):
                raise ConfigurationError("times and headings differ in length", "heading_plan")
            if self.times[0] != 0.0 or any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ConfigurationError("schedule times must start at 0 and increase", "heading_plan")

    @property
    def is_waypoint(self) -> bool:
        return bool(self.waypoints)

    def bbox(self, start=(0.0, 0.0)):
        pts = np.array(list(self.waypoints) + [tuple(start)], dtype=float)
        return (*pts.min(axis=0), *pts.max(axis=0))


@dataclass(frozen=True)
class SimConfig:
    basis: BasisSet
    flow: FlowParameters
    heading_plan: HeadingPlan
    v_true: float = 0.2
    duration: float = 7 * 86400.0
    dt: float = 10.0
    surfacing_interval: float = 4 * 3600.0
    segment_subsample: int = 180
    rng_seed: int = 0
    position_noise: float = 0.0
    heading_noise: float = 0.0
    start: tuple = (0.0, 0.0)
    epoch: str = DEFAULT_EPOCH
    origin: tuple | None = None  # (lat, lon) of the local frame, if records should be geodetic
    turn_rate: float = 0.002  # rad/s; 0 turns instantly

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        if self.origin is not None:
            object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if not self.dt > 0:
            raise ConfigurationError("must be > 0", "dt")
        if not self.surfacing_interval > 0:
            raise ConfigurationError("must be > 0", "surfacing_interval")
        if not self.duration >= self.surfacing_interval:
            raise ConfigurationError("must be >= surfacing_interval", "duration")
        if not self.v_true > 0:
            raise ConfigurationError("must be > 0", "v_true")
        if self.segment_subsample < 1:
            raise ConfigurationError("must be >= 1", "segment_subsample")
        if self.turn_rate < 0:
            raise ConfigurationError("must be >= 0", "turn_rate")
        if self.position_noise < 0 or self.heading_noise < 0:
            raise ConfigurationError("noise levels must be >= 0", "noise")
        if self.flow.n != len(self.basis):
            raise ConfigurationError("true flow theta does not match its basis set", "flow")
        for name, val in (("duration", self.duration), ("surfacing_interval", self.surfacing_interval)):
            ratio = val / self.dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigurationError(f"must be a whole number of dt steps, got {ratio}", name)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def steps_per_segment(self) -> int:
        return int(round(self.surfacing_interval / self.dt))


@dataclass(frozen=True)
class AnomalyInjection:
    kind: str
    t_start: float
    t_end: float = math.inf
    magnitude: float = 0.5

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigurationError(f"unknown anomaly kind {self.kind!r}", "kind")
        if not self.t_start < self.t_end:
            raise ConfigurationError("t_start must precede t_end", "t_start")
        if self.kind == "speed_degradation" and not 0 < self.magnitude <= 1:
            raise ConfigurationError("degradation multiplier must be in (0, 1]", "magnitude")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


def _validate_injections(injections: Sequence[AnomalyInjection]):
    by_kind: dict[str, list] = {}
    for inj in injections:
        by_kind.setdefault(inj.kind, []).append(inj)
    for kind, items in by_kind.items():
        items = sorted(items, key=lambda i: i.t_start)
        for a, b in zip(items, items[1:]):
            if b.t_start < a.t_end:
                raise ConfigurationError(f"overlapping {kind} injections", "injections")


@dataclass(frozen=True)
class GroundTruth:
    times: np.ndarray  # (n+1,)
    positions: np.ndarray  # (n+1, 2)
    headings: np.ndarray  # actual (slewed) heading, (n+1,)
    speed: np.ndarray  # effective through-water speed, (n+1,)
    flow: np.ndarray  # true flow at (x_k, t_k), (n+1, 2)
    anomaly: np.ndarray  # bool, any injection active at t_k
    segments: np.ndarray  # (n_seg, 2) sample indices of each dive segment [start, end]
    config: SimConfig
    injections: tuple = field(default=())

    def __len__(self):
        return len(self.times)

    @property
    def segment_times(self) -> np.ndarray:
        return self.times[self.segments]


def _reached(prev, target, pos, radius) -> bool:
    """Inside the capture radius, or already past the target along the leg."""
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    if math.hypot(dx, dy) <= radius:
        return True
    lx, ly = target[0] - prev[0], target[1] - prev[1]
    return lx * dx + ly * dy < 0


def _aim(plan: HeadingPlan, pos, wp_index: int, radius: float, start):
    """Heading toward the current waypoint, advancing past reached ones."""
    wps = plan.waypoints
    n = len(wps)
    for _ in range(n):
        if not plan.loop and wp_index >= n:
            break
        prev = start if wp_index == 0 else wps[(wp_index - 1) % n]
        if not _reached(prev, wps[wp_index % n], pos, radius):
            break
        wp_index += 1
    if not plan.loop and wp_index >= n:
        tx, ty = wps[-1]
    else:
        tx, ty = wps[wp_index % n]
    return math.atan2(ty - pos[1], tx - pos[0]), wp_index


def _scheduled_heading(plan: HeadingPlan, t: float) -> float:
    i = int(np.searchsorted(plan.times, t, side="right")) - 1
    return plan.headings[max(i, 0)]


def simulate(cfg: SimConfig, injections: Sequence[AnomalyInjection] = ()) -> GroundTruth:
    """Integrate the glider kinematics under the configured flow and anomalies."""
    injections = tuple(injections)
    _validate_injections(injections)
    n = cfg.n_steps
    m = cfg.steps_per_segment
    dt = cfg.dt
    plan = cfg.heading_plan
    radius = plan.capture_radius
    if radius is None:
        radius = 0.5 * cfg.v_true * cfg.surfacing_interval

    times = np.arange(n + 1) * dt
    pos = np.empty((n + 1, 2))
    headings = np.empty(n + 1)
    speed = np.empty(n + 1)
    flow = np.empty((n + 1, 2))
    anomaly = np.zeros(n + 1, dtype=bool)

    x, y = cfg.start
    wp_index = 0
    target = psi = None
    max_turn = cfg.turn_rate * dt if cfg.turn_rate > 0 else math.inf
    for k in range(n + 1):
        t = times[k]
        if not plan.is_waypoint:
            target = _scheduled_heading(plan, t)
        elif k % m == 0 and k < n:
            target, wp_index = _aim(plan, (x, y), wp_index, radius, cfg.start)
        if psi is None:
            psi = target
        else:
            turn = math.remainder(target - psi, 2 * math.pi)
            psi = math.remainder(psi + max(-max_turn, min(max_turn, turn)), 2 * math.pi)
        mult = 1.0
        drift = 0.0
        for inj in injections:
            if inj.active(t):
                anomaly[k] = True
                if inj.kind == "speed_degradation":
                    mult *= inj.magnitude
                elif inj.kind == "speed_dropout":
                    mult = 0.0
                else:
                    drift += inj.magnitude
        f = eval_flow(cfg.flow, cfg.basis, (x, y), t)
        pos[k] = x, y
        headings[k] = psi
        speed[k] = cfg.v_true * mult
        flow[k] = f
        if k == n:
            break
        v = speed[k]
        x = x + dt * (f[0] + v * math.cos(psi + drift))
        y = y + dt * (f[1] + v * math.sin(psi + drift))
        if not (abs(x) < SANITY_BOUND and abs(y) < SANITY_BOUND):
            raise SimulationError(f"position left the sanity bound at t={t + dt:.0f} s")

    starts = np.arange(0, n, m)
    ends = np.minimum(starts + m, n)
    segments = np.column_stack([starts, ends])
    return GroundTruth(times, pos, headings, speed, flow, anomaly, segments, cfg, injections)


@dataclass(frozen=True)
class SegmentFlow:
    t_start: float
    t_end: float
    f_m: np.ndarray


def dead_reckon_flow(gt: GroundTruth, segments=None) -> list[SegmentFlow]:
    """Depth-averaged current as a glider computes it at each surfacing.

    The glider believes it flew at the nominal speed along its commanded
    heading, so ``F_M = (actual - commanded displacement) / duration``. Any
    loss of speed therefore shows up as apparent current.
    """
    if segments is None:
        segments = gt.segments
    cfg = gt.config
    out = []
    for i0, i1 in np.asarray(segments, dtype=int):
        duration = gt.times[i1] - gt.times[i0]
        if duration <= 0:
            log.warning("skipping zero-length segment at t=%.1f s", gt.times[i0])
            continue
        steps = np.diff(gt.times[i0:i1 + 1])
        psi = gt.headings[i0:i1]
        commanded = cfg.v_true * np.array(
            [np.sum(steps * np.cos(psi)), np.sum(steps * np.sin(psi))]
        )
        actual = gt.positions[i1] - gt.positions[i0]
        out.append(SegmentFlow(float(gt.times[i0]), float(gt.times[i1]), (actual - commanded) / duration))
    return out


def _rngs(cfg: SimConfig):
    # independent streams so dense and sparse noise do not depend on call order
    seq = np.random.SeedSequence(cfg.rng_seed)
    flow_seq, dense_seq, sparse_seq = seq.spawn(3)
    return flow_seq, dense_seq, sparse_seq


def flow_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[0])


def _frame(cfg: SimConfig):
    return None if cfg.origin is None else LocalFrame(*cfg.origin)


def to_dense_records(gt: GroundTruth):
    """Full-resolution stream: one record per integration step."""
    cfg = gt.config
    rng = np.random.default_rng(_rngs(cfg)[1])
    xy = gt.positions.copy()
    psi = gt.headings.copy()
    if cfg.position_noise > 0:
        xy += rng.normal(scale=cfg.position_noise, size=xy.shape)
    if cfg.heading_noise > 0:
        psi += rng.normal(scale=cfg.heading_noise, size=psi.shape)
    records = [
        DenseRecord(float(t), float(p[0]), float(p[1]), float(h))
        for t, p, h in zip(gt.times, xy, psi)
    ]
    return DenseStream(records, epoch=cfg.epoch, frame=_frame(cfg))


def circular_mean(angles) -> float:
    a = np.asarray(angles, dtype=float)
    return float(math.atan2(np.mean(np.sin(a)), np.mean(np.cos(a))))


def to_sparse_records(gt: GroundTruth, cfg: SimConfig | None = None, intra_samples: bool = False):
    """Per-surfacing stream: fixes, segment-mean heading and dead-reckoned flow.

    With ``intra_samples`` each record also carries every
    ``segment_subsample``-th position/heading sample from inside the dive.
    """
    cfg = cfg or gt.config
    rng = np.random.default_rng(_rngs(cfg)[2])
    surf_idx = np.append(gt.segments[:, 0], gt.segments[-1, 1])
    fixes = gt.positions[surf_idx].copy()
    if cfg.position_noise > 0:
        fixes += rng.normal(scale=cfg.position_noise, size=fixes.shape)
    sample_noise_rng = np.random.default_rng(rng.integers(2**63))

    flows = {sf.t_start: sf.f_m for sf in dead_reckon_flow(gt)}
    records = []
    for j, (i0, i1) in enumerate(gt.segments):
        t0, t1 = float(gt.times[i0]), float(gt.times[i1])
        if t0 not in flows:
            continue
        psi = gt.headings[i0:i1]
        mean_heading = circular_mean(psi)
        if cfg.heading_noise > 0:
            mean_heading += float(rng.normal(scale=cfg.heading_noise))
        samples = ()
        if intra_samples:
            idx = np.arange(i0 + cfg.segment_subsample, i1, cfg.segment_subsample)
            xy = gt.positions[idx].copy()
            h = gt.headings[idx].copy()
            if cfg.position_noise > 0:
                xy += sample_noise_rng.normal(scale=cfg.position_noise, size=xy.shape)
            if cfg.heading_noise > 0:
                h += sample_noise_rng.normal(scale=cfg.heading_noise, size=h.shape)
            samples = tuple(
                DenseRecord(float(gt.times[i]), float(p[0]), float(p[1]), float(hh))
                for i, p, hh in zip(idx, xy, h)
            )
        fm = flows[t0]
        records.append(
            SparseRecord(
                t0, t1,
                (float(fixes[j, 0]), float(fixes[j, 1])),
                (float(fixes[j + 1, 0]), float(fixes[j + 1, 1])),
                mean_heading,
                (float(fm[0]), float(fm[1])),
                samples,
            )
        )
    return SparseStream(records, epoch=cfg.epoch, frame=_frame(cfg))
