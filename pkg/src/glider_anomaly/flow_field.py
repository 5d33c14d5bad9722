"""Spatio-temporal radial basis flow model.

The ambient current is written as ``F(x, t) = theta @ phi(x, t)`` where each
basis function is a spatial kernel times a tidal oscillation::

    phi_i(x, t) = exp(-||x - c_i|| / (2 sigma_i)) * cos(omega_i t + upsilon_i)

Note the kernel uses the plain Euclidean distance, not its square, so it is a
Laplacian-type kernel rather than a Gaussian. Swapping in the squared-exponential
``exp(-||x - c_i||**2 / (2 sigma_i**2))`` would only require changing
:func:`spatial_factors`.

Positions are metres in a local east/north frame, times are seconds since the
deployment epoch. ``theta`` row 0 is the east (u) component, row 1 the north
(v) component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

#: Tidal frequency used for every basis unless configured otherwise (rad/s).
DEFAULT_OMEGA = 2.0 * math.pi * 1e-6
DEFAULT_COVERAGE_FLOOR = 0.05


@dataclass(frozen=True)
class BasisFunction:
    center: tuple[float, float]
    sigma: float
    omega: float = DEFAULT_OMEGA
    phase: float = 0.0

    def __post_init__(self):
        cx, cy = (float(c) for c in self.center)
        object.__setattr__(self, "center", (cx, cy))
        vals = (cx, cy, self.sigma, self.omega, self.phase)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError("basis parameters must be finite", "basis")
        if not self.sigma > 0:
            raise ConfigurationError(f"width must be > 0, got {self.sigma}", "sigma")
        if self.omega < 0:
            raise ConfigurationError(f"tidal frequency must be >= 0, got {self.omega}", "omega")


class BasisSet:
    """Ordered, immutable collection of basis functions.

    The order fixes the column layout of ``theta``. Parameters are cached as
    arrays so evaluation is a handful of vectorised numpy calls.
    """

    __slots__ = ("bases", "centers", "sigmas", "omegas", "phases")

    def __init__(self, bases: Iterable[BasisFunction]):
        bases = tuple(bases)
        if not bases:
            raise ConfigurationError("a basis set needs at least one function", "basis")
        self.bases = bases
        self.centers = np.array([b.center for b in bases], dtype=float)
        self.sigmas = np.array([b.sigma for b in bases], dtype=float)
        self.omegas = np.array([b.omega for b in bases], dtype=float)
        self.phases = np.array([b.phase for b in bases], dtype=float)
        for arr in (self.centers, self.sigmas, self.omegas, self.phases):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.bases)

    def __iter__(self):
        return iter(self.bases)

    def __getitem__(self, i):
        return self.bases[i]

    def __eq__(self, other):
        return isinstance(other, BasisSet) and self.bases == other.bases

    def __hash__(self):
        return hash(self.bases)

    def __repr__(self):
        return f"BasisSet({list(self.bases)!r})"

    def translated(self, offset) -> "BasisSet":
        dx, dy = offset
        return BasisSet(
            BasisFunction((b.center[0] + dx, b.center[1] + dy), b.sigma, b.omega, b.phase)
            for b in self.bases
        )

    @classmethod
    def grid(
        cls,
        bbox: Sequence[float],
        sigma: float,
        omega: float = DEFAULT_OMEGA,
        phase: float = 0.0,
        shape: tuple[int, int] = (2, 2),
    ) -> "BasisSet":
        """Centres on a regular ``shape`` grid spanning ``bbox = (xmin, ymin, xmax, ymax)``.

        The default 2x2 grid puts one centre on each corner of the box.
        """
        xmin, ymin, xmax, ymax = (float(v) for v in bbox)
        nx, ny = shape
        xs = np.linspace(xmin, xmax, nx) if nx > 1 else np.array([(xmin + xmax) / 2])
        ys = np.linspace(ymin, ymax, ny) if ny > 1 else np.array([(ymin + ymax) / 2])
        return cls(
            BasisFunction((float(x), float(y)), sigma, omega, phase) for y in ys for x in xs
        )


@dataclass(frozen=True)
class FlowParameters:
    """2 x N coefficient matrix; row 0 = east (u), row 1 = north (v), m/s."""

    theta: np.ndarray = field(repr=True)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != 2 or theta.shape[1] < 1:
            raise ConfigurationError(f"theta must have shape (2, N), got {theta.shape}", "theta")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta entries must be finite", "theta")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, n: int) -> "FlowParameters":
        return cls(np.zeros((2, n)))

    @property
    def n(self) -> int:
        return self.theta.shape[1]

    def __eq__(self, other):
        return isinstance(other, FlowParameters) and np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash(self.theta.tobytes())


def _check_finite(x, t):
    if not (np.isfinite(x).all() and np.isfinite(t).all()):
        raise DomainError(f"non-finite position or time: x={x!r}, t={t!r}")


def spatial_factors(bs: BasisSet, x) -> np.ndarray:
    """``exp(-||x - c_i|| / (2 sigma_i))`` for every basis; shape (N,) or (M, N)."""
    x = np.asarray(x, dtype=float)
    d = x[..., None, :] - bs.centers
    dist = np.hypot(d[..., 0], d[..., 1])
    return np.exp(-dist / (2.0 * bs.sigmas))


def temporal_factors(bs: BasisSet, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.cos(bs.omegas * t[..., None] + bs.phases)


def eval_basis(bs: BasisSet, x, t) -> np.ndarray:
    """Evaluate every basis function at position ``x`` (m) and time ``t`` (s).

    Also accepts stacked inputs: ``x`` of shape (M, 2) with ``t`` of shape (M,)
    returns an (M, N) array.
    """
    _check_finite(x, t)
    return spatial_factors(bs, x) * temporal_factors(bs, t)


def _check_dims(fp: FlowParameters, bs: BasisSet):
    if fp.n != len(bs):
        raise ConfigurationError(
            f"theta has {fp.n} columns but the basis set has {len(bs)} functions", "theta"
        )


def eval_flow(fp: FlowParameters, bs: BasisSet, x, t) -> np.ndarray:
    """Flow velocity ``theta @ phi(x, t)`` in m/s; (2,) or (M, 2) for stacked inputs."""
    _check_dims(fp, bs)
    phi = eval_basis(bs, x, t)
    return phi @ fp.theta.T


@dataclass(frozen=True)
class CoverageReport:
    factors: np.ndarray  # best spatial factor at each trajectory point
    flagged: np.ndarray  # bool mask, True where coverage is below the floor
    floor: float

    @property
    def ok(self) -> bool:
        return not bool(self.flagged.any())

    @property
    def worst(self) -> float:
        return float(self.factors.min())


def coverage_check(bs: BasisSet, trajectory, floor: float = DEFAULT_COVERAGE_FLOOR) -> CoverageReport:
    """Check that some basis function reaches every trajectory point.

    A point is flagged when ``max_i exp(-||x - c_i|| / (2 sigma_i))`` drops
    below ``floor``; the flow there is essentially unobservable.
    """
    pts = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if pts.size == 0:
        raise ValueError("coverage_check needs a non-empty trajectory")
    factors = spatial_factors(bs, pts).max(axis=1)
    return CoverageReport(factors=factors, flagged=factors < floor, floor=floor)


def random_flow(
    bs: BasisSet,
    rng: np.random.Generator,
    max_speed: float,
    region: Sequence[float],
    resolution: int = 41,
) -> FlowParameters:
    """Draw random coefficients whose flow magnitude peaks at ``max_speed`` over ``region``.

    The peak is taken over a ``resolution`` x ``resolution`` grid of the box
    ``(xmin, ymin, xmax, ymax)`` using the phase-free envelope
    ``sum_i ||theta_i|| s_i(x)``, which bounds ``||F(x, t)||`` for every t.
    """
    theta = rng.normal(size=(2, len(bs)))
    xmin, ymin, xmax, ymax = region
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, resolution), np.linspace(ymin, ymax, resolution))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    envelope = spatial_factors(bs, pts) @ np.hypot(theta[0], theta[1])
    return FlowParameters(theta * (max_speed / envelope.max()))
