"""Adaptive observer for glider speed and ambient flow.

Given measured positions ``x(t)`` and headings ``psi(t)``, the observer keeps a
trajectory estimate ``x_hat``, a through-water speed estimate ``v_hat`` and flow
coefficients ``theta_hat``. With innovation ``e = x - x_hat`` and
``phi = phi(x_hat, t)`` one step of length ``dt`` is::

    theta_hat += dt * gamma_bar * outer(e, phi)
    v_hat     += dt * s * dot(e, Psi)
    x_hat     += dt * (theta_hat @ phi + v_hat * Psi + K @ e)

with ``Psi = (cos psi, sin psi)``. This is the usual gradient adaptive
observer; ``K`` pulls the trajectory estimate onto the measurements,
``gamma_bar`` and ``s`` set how fast the innovation is pushed into the flow
and speed estimates.

The parameter updates are applied before the position update (semi-implicit
Euler). With the speed gain in the tens of milli-per-second squared the
speed/position loop rings at roughly ``sqrt(s)`` rad/s; the fully explicit
scheme amplifies that oscillation for any step above ``2 K / s`` (0.2 s at the
default gains), while the semi-implicit one contracts it for steps up to about
``2 / sqrt(s)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .data_io.records import DenseStream, Series, SparseRecord
from .errors import ConfigurationError, DivergenceError, InputError
from .flow_field import BasisSet, eval_basis

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 50e3  # metres of tracking error before giving up
DEFAULT_V0 = 0.20
GAP_FACTOR = 5.0
DEFAULT_TURN_WINDOW = 1200.0  # seconds


@dataclass(frozen=True)
class EstimatorGains:
    """Observer gains. Zero adaptation rates freeze the corresponding estimate."""

    K: np.ndarray = field(default_factory=lambda: np.diag([0.003, 0.003]))
    gamma_bar: float = 5e-7
    s: float = 30e-3

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.ndim == 0:
            K = np.eye(2) * float(K)
        if K.shape != (2, 2) or not np.all(np.isfinite(K)):
            raise ConfigurationError("K must be a finite 2x2 matrix", "K")
        if not np.allclose(K, K.T, rtol=0, atol=1e-15):
            raise ConfigurationError("K must be symmetric", "K")
        if np.linalg.eigvalsh(K).min() <= 0:
            raise ConfigurationError("K must be positive definite", "K")
        if not (self.gamma_bar >= 0 and self.s >= 0):
            raise ConfigurationError("adaptation gains must be non-negative", "gains")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "gamma_bar", float(self.gamma_bar))
        object.__setattr__(self, "s", float(self.s))

    def __eq__(self, other):
        return (
            isinstance(other, EstimatorGains)
            and np.array_equal(self.K, other.K)
            and self.gamma_bar == other.gamma_bar
            and self.s == other.s
        )

    __hash__ = None


@dataclass(frozen=True)
class EstimatorState:
    x_hat: np.ndarray
    v_hat: float
    theta_hat: np.ndarray
    t: float
    gains: EstimatorGains
    basis: BasisSet
    clle_max: float = 0.0
    f_l_max: float = 0.0
    f_m_max: float = 0.0

    @property
    def flow(self) -> np.ndarray:
        """Current algorithm flow estimate at ``x_hat``."""
        return self.theta_hat @ eval_basis(self.basis, self.x_hat, self.t)


def init(gains: EstimatorGains, basis_set: BasisSet, x0, v0: float | None = None, t0: float = 0.0):
    """Start at the first fix with zero flow coefficients."""
    x0 = np.array(x0, dtype=float)
    if x0.shape != (2,) or not np.all(np.isfinite(x0)):
        raise InputError(f"first fix must be a finite 2-vector, got {x0!r}")
    return EstimatorState(
        x_hat=x0,
        v_hat=DEFAULT_V0 if v0 is None else float(v0),
        theta_hat=np.zeros((2, len(basis_set))),
        t=float(t0),
        gains=gains,
        basis=basis_set,
    )


def _advance(st: EstimatorState, x_meas, psi_c: float, dt: float):
    """One observer step; also returns the sample ``(e, |e|, v_hat, F_L)`` at ``st.t``."""
    g = st.gains
    phi = eval_basis(st.basis, st.x_hat, st.t)
    f_l = st.theta_hat @ phi
    if x_meas is None:
        e = np.zeros(2)
    else:
        e = np.asarray(x_meas, dtype=float) - st.x_hat
    err = math.hypot(e[0], e[1])
    if not err <= DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"tracking error {err:.3g} m at t={st.t:.0f} s; reduce the gains or the step"
        )
    psi = np.array([math.cos(psi_c), math.sin(psi_c)])
    theta = st.theta_hat + (dt * g.gamma_bar) * np.outer(e, phi)
    v_hat = st.v_hat + dt * g.s * float(e @ psi)
    x_hat = st.x_hat + dt * (theta @ phi + v_hat * psi + g.K @ e)
    # the sum is non-finite whenever any entry is; one check instead of three
    if not math.isfinite(float(theta.sum()) + x_hat[0] + x_hat[1] + v_hat):
        raise DivergenceError(f"estimator state became non-finite at t={st.t:.0f} s")
    new = replace(
        st,
        x_hat=x_hat,
        v_hat=v_hat,
        theta_hat=theta,
        t=st.t + dt,
        clle_max=max(st.clle_max, err),
        f_l_max=max(st.f_l_max, math.hypot(f_l[0], f_l[1])),
    )
    return new, (st.x_hat, err, st.v_hat, f_l)


def step(st: EstimatorState, x_meas, psi_c: float, dt: float) -> EstimatorState:
    """Advance the observer by ``dt`` seconds using the fix ``x_meas`` taken at ``st.t``.

    ``x_meas=None`` runs on prediction only (zero innovation).
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    if x_meas is not None and not np.all(np.isfinite(x_meas)):
        raise InputError(f"non-finite measurement {x_meas!r}")
    return _advance(st, x_meas, psi_c, dt)[0]


def observe_flow(st: EstimatorState, f_m) -> EstimatorState:
    """Fold a glider-reported flow into the running maximum ``f_m_max``."""
    return replace(st, f_m_max=max(st.f_m_max, math.hypot(f_m[0], f_m[1])))


@dataclass
class EstimateSeries:
    t: np.ndarray
    x: np.ndarray  # measured trajectory used as input, (M, 2)
    x_hat: np.ndarray
    clle: np.ndarray  # |x - x_hat|
    v_l: np.ndarray
    f_l: np.ndarray  # (M, 2) algorithm flow estimate

    COLUMNS = ("t", "x", "y", "x_hat", "y_hat", "clle", "v_l", "f_l_u", "f_l_v")

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty((0, 2)), np.empty((0, 2)), np.empty(0), np.empty(0), np.empty((0, 2)))

    @classmethod
    def from_samples(cls, t, x, samples):
        if not samples:
            return cls.empty()
        x_hat, clle, v_l, f_l = zip(*samples)
        return cls(
            np.asarray(t, dtype=float),
            np.asarray(x, dtype=float).reshape(-1, 2),
            np.array(x_hat),
            np.array(clle),
            np.array(v_l),
            np.array(f_l),
        )

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, n) for p in parts]) for n in ("t", "x", "x_hat", "clle", "v_l", "f_l")))

    def to_series(self, epoch=None, meta=None) -> Series:
        cols = dict(zip(self.COLUMNS, (
            self.t, self.x[:, 0], self.x[:, 1], self.x_hat[:, 0], self.x_hat[:, 1],
            self.clle, self.v_l, self.f_l[:, 0], self.f_l[:, 1],
        )))
        return Series(cols, epoch=epoch, meta=dict(meta or {}))

    @classmethod
    def from_series(cls, s: Series):
        c = s.columns
        return cls(
            c["t"], np.column_stack([c["x"], c["y"]]), np.column_stack([c["x_hat"], c["y_hat"]]),
            c["clle"], c["v_l"], np.column_stack([c["f_l_u"], c["f_l_v"]]),
        )


def run_offline(records, gains: EstimatorGains, basis_set: BasisSet, v0: float | None = None):
    """Feed a dense record stream through the observer.

    Returns ``(series, final_state)``; sample ``k`` holds the estimate at the
    time of record ``k`` before that record is assimilated.
    """
    recs = list(records.records if isinstance(records, DenseStream) else records)
    if not recs:
        return EstimateSeries.empty(), None
    t = np.array([r.t for r in recs], dtype=float)
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 1
        raise InputError(f"record timestamps must increase (record {bad}, t={t[bad]!r})")
    xy = np.array([(r.x, r.y) for r in recs], dtype=float)
    st = init(gains, basis_set, xy[0], v0, t0=t[0])
    samples = []
    for k in range(len(recs) - 1):
        st, sample = _advance(st, xy[k], recs[k].heading, t[k + 1] - t[k])
        samples.append(sample)
    last_phi = eval_basis(basis_set, st.x_hat, st.t)
    e = xy[-1] - st.x_hat
    samples.append((st.x_hat, math.hypot(e[0], e[1]), st.v_hat, st.theta_hat @ last_phi))
    return EstimateSeries.from_samples(t, xy, samples), st


def _turn_in(u1, d, span, w, iterations=8, nodes=241):
    """Velocity profile that turns from ``u1`` and then covers ``d`` in ``span`` seconds.

    Over ``[0, w]`` the velocity angle and magnitude both move linearly from
    ``u1`` to the final constant velocity ``u2``, which is solved for by fixed
    point iteration so that the total displacement is exactly ``d``. Returns
    the displacement on a fine grid of the window and ``u2``.
    """
    tau = np.linspace(0.0, w, nodes)
    frac = tau / w
    a1 = math.atan2(u1[1], u1[0])
    m1 = math.hypot(u1[0], u1[1])
    u2 = d / span
    disp = None
    for _ in range(iterations):
        da = math.remainder(math.atan2(u2[1], u2[0]) - a1, 2 * math.pi)
        mag = m1 + (math.hypot(u2[0], u2[1]) - m1) * frac
        ang = a1 + da * frac
        vel = np.column_stack([mag * np.cos(ang), mag * np.sin(ang)])
        steps = 0.5 * (vel[1:] + vel[:-1]) * np.diff(tau)[:, None]
        disp = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
        u2 = (d - disp[-1]) / (span - w)
    return (tau, disp), u2


class OnlineEstimator:
    """Incremental observer fed one surfacing record at a time.

    Between the fixes of a record the measured trajectory is interpolated
    linearly (through any intra-segment samples the record carries) and the
    observer runs at a fixed internal step ``dt``. Each call to :meth:`extend`
    returns only the new samples; earlier output is never revised.

    A plain polyline has a velocity jump at every surfacing, and the heading
    jumps with it. Either jump shakes the speed estimate hard, so for the first
    ``turn_window`` seconds of each record the interpolated velocity ramps
    from the previous chord velocity to the new one and the heading ramps from
    the previous heading to the record's. The path still passes through every
    fix. ``turn_window=0`` gives the plain polyline.
    """

    def __init__(self, gains: EstimatorGains, basis_set: BasisSet, dt: float = 10.0,
                 v0: float | None = None, surfacing_interval: float | None = None,
                 turn_window: float = DEFAULT_TURN_WINDOW):
        if not dt > 0:
            raise ConfigurationError("internal step must be > 0", "dt")
        if not turn_window >= 0:
            raise ConfigurationError("must be >= 0", "turn_window")
        self.gains = gains
        self.basis = basis_set
        self.dt = float(dt)
        self.v0 = v0
        self.surfacing_interval = surfacing_interval
        self.turn_window = float(turn_window)
        self.state: EstimatorState | None = None
        self._last: SparseRecord | None = None
        self._vel = None  # velocity and heading at the end of the last interpolated piece
        self._psi = None
        self._parts: list[EstimateSeries] = []
        self.warnings: list[str] = []

    @property
    def series(self) -> EstimateSeries:
        return EstimateSeries.concat(self._parts)

    def _grid(self, t0, t1):
        n = int(math.ceil((t1 - t0) / self.dt - 1e-9))
        times = t0 + self.dt * np.arange(n)
        return times[times < t1]

    def _run(self, times, t1, xs, psis):
        if len(times) == 0:
            return EstimateSeries.empty()
        nxt = np.append(times[1:], t1)
        st = self.state
        samples = []
        for k in range(len(times)):
            st = replace(st, t=float(times[k])) if st.t != times[k] else st
            xk = None if xs is None else xs[k]
            st, sample = _advance(st, xk, psis[k], nxt[k] - times[k])
            if xs is None:
                sample = (sample[0], math.nan, sample[2], sample[3])
            samples.append(sample)
        self.state = replace(st, t=float(t1))
        xs_out = np.full((len(times), 2), np.nan) if xs is None else xs
        return EstimateSeries.from_samples(times, xs_out, samples)

    def _piecewise(self, t0, t1, knots_t, knots_xy, headings_t, headings):
        """Interpolated fixes and headings on the internal grid of ``[t0, t1)``."""
        knots_t = np.asarray(knots_t, dtype=float)
        knots_xy = np.asarray(knots_xy, dtype=float)
        times = self._grid(t0, t1)
        xs = np.column_stack([np.interp(times, knots_t, knots_xy[:, 0]),
                              np.interp(times, knots_t, knots_xy[:, 1])])
        idx = np.searchsorted(headings_t, times, side="right") - 1
        psis = np.asarray(headings, dtype=float)[np.maximum(idx, 0)]
        span = knots_t[1] - knots_t[0]
        w = min(self.turn_window, span / 2)
        if self._vel is not None and w > 0:
            x0 = knots_xy[0]
            xw, u2 = _turn_in(self._vel, knots_xy[1] - x0, span, w)
            tau = times - knots_t[0]
            a = tau < w
            b = (tau >= w) & (tau < span)
            for j in range(2):
                xs[a, j] = x0[j] + np.interp(tau[a], xw[0], xw[1][:, j])
                xs[b, j] = x0[j] + xw[1][-1, j] + u2[j] * (tau[b] - w)
            turn = math.remainder(psis[0] - self._psi, 2 * math.pi)
            psis[a] = self._psi + turn * tau[a] / w
            last_vel = u2
        else:
            last_vel = None
        if len(knots_t) > 2 or last_vel is None:
            last_vel = (knots_xy[-1] - knots_xy[-2]) / (knots_t[-1] - knots_t[-2])
        return times, xs, psis, last_vel, float(np.asarray(headings, dtype=float)[-1])

    def _gap(self, rec: SparseRecord):
        prev = self._last
        gap = rec.segment_start_t - prev.segment_end_t
        nominal = self.surfacing_interval or prev.duration
        if gap > GAP_FACTOR * nominal:
            msg = (f"record gap of {gap:.0f} s before t={rec.segment_start_t:.0f} s exceeds "
                   f"{GAP_FACTOR:g}x the surfacing interval; predicting without fixes")
            log.warning(msg)
            self.warnings.append(msg)
            times = self._grid(prev.segment_end_t, rec.segment_start_t)
            self._vel = None
            return self._run(times, rec.segment_start_t, None, np.full(len(times), self._psi))
        msg = f"missing surfacing record(s): {gap:.0f} s gap before t={rec.segment_start_t:.0f} s"
        log.warning(msg)
        self.warnings.append(msg)
        a = np.asarray(prev.end_fix, dtype=float)
        b = np.asarray(rec.start_fix, dtype=float)
        chord = math.atan2(b[1] - a[1], b[0] - a[0]) if np.any(a != b) else self._psi
        times, xs, psis, self._vel, self._psi = self._piecewise(
            prev.segment_end_t, rec.segment_start_t, [prev.segment_end_t, rec.segment_start_t],
            np.array([a, b]), [prev.segment_end_t], [chord])
        return self._run(times, rec.segment_start_t, xs, psis)

    def extend(self, rec: SparseRecord) -> EstimateSeries:
        parts = []
        if self.state is None:
            self.state = init(self.gains, self.basis, rec.start_fix, self.v0, t0=rec.segment_start_t)
        else:
            gap = rec.segment_start_t - self._last.segment_end_t
            if gap < -1e-9:
                raise InputError(f"record starting at {rec.segment_start_t!r} arrives out of order")
            if gap > 1e-9:
                parts.append(self._gap(rec))
        knots_t = [rec.segment_start_t] + [s.t for s in rec.samples] + [rec.segment_end_t]
        knots_xy = np.array([rec.start_fix] + [(s.x, s.y) for s in rec.samples] + [rec.end_fix], dtype=float)
        headings_t = [rec.segment_start_t] + [s.t for s in rec.samples]
        headings = [rec.mean_heading] + [s.heading for s in rec.samples]
        times, xs, psis, self._vel, self._psi = self._piecewise(
            rec.segment_start_t, rec.segment_end_t, knots_t, knots_xy, headings_t, headings)
        parts.append(self._run(times, rec.segment_end_t, xs, psis))
        self.state = observe_flow(self.state, rec.f_m)
        self._last = rec
        chunk = EstimateSeries.concat(parts)
        self._parts.append(chunk)
        return chunk


def run_online(feed: Iterable[SparseRecord], gains: EstimatorGains, basis_set: BasisSet,
               dt: float = 10.0, v0: float | None = None, surfacing_interval: float | None = None,
               turn_window: float = DEFAULT_TURN_WINDOW):
    """One-shot convenience wrapper around :class:`OnlineEstimator`."""
    est = OnlineEstimator(gains, basis_set, dt=dt, v0=v0, surfacing_interval=surfacing_interval,
                          turn_window=turn_window)
    for rec in feed:
        est.extend(rec)
    return est.series, est
