"""Run configuration: JSON file <-> typed objects.

Every field is optional. Omitted fields fall back to the defaults of the
Franklin deployment (``preset: "franklin"``); the other presets swap in the
widths and gains used for the other three deployments. A minimal file is
just ``{}``.

Layout (all keys optional)::

    {
      "preset": "franklin",
      "scenario": "default",
      "seed": 0,
      "basis":     {"n": 4, "sigma": 13000.0, "omega": 6.283e-06, "phase": 0.0,
                    "centers": [[x, y], ...], "sigmas": [...]},
      "gains":     {"K": 0.003 | [[a, b], [b, c]], "gamma_bar": 5e-07, "s": 0.03},
      "detection": {"v_min": 0.15, "v_max": 0.25, "gamma_f": 1.0,
                    "debounce": 1800.0, "burn_in": null},
      "online":    {"dt": 10.0, "turn_window": 1200.0},
      "sim":       {"v_true": 0.2, "duration": 604800.0, "dt": 10.0,
                    "surfacing_interval": 14400.0, "segment_subsample": 180,
                    "position_noise": 0.0, "heading_noise": 0.0, "turn_rate": 0.002,
                    "start": [0, 0], "epoch": "2023-03-01T00:00:00Z", "origin": null,
                    "waypoints": [[x, y], ...], "loop": true, "capture_radius": null,
                    "schedule": {"times": [...], "headings": [...]},
                    "flow": {"theta": [[...], [...]]} | {"max_speed": 0.15},
                    "injections": [{"kind": "speed_degradation", "t_start": 259200.0,
                                    "t_end": null, "magnitude": 0.6}]}
    }

Without explicit centres the basis functions sit on a square grid spanning
the waypoint bounding box (2x2 for four functions). Without an explicit
``theta`` the true flow is drawn from the seed with its magnitude capped at
``max_speed``. ``burn_in: null`` means a tenth of the mission duration.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..detector import DEFAULT_BURN_IN_FRACTION, DetectionConfig
from ..errors import ConfigurationError, FormatError
from ..estimator import DEFAULT_TURN_WINDOW, EstimatorGains
from ..flow_field import DEFAULT_OMEGA, BasisFunction, BasisSet, FlowParameters, random_flow
from ..simulator import DEFAULT_EPOCH, AnomalyInjection, HeadingPlan, SimConfig, flow_rng

# width (m), K (1/s), gamma_bar, s per deployment
PRESETS = {
    "franklin": (13e3, 0.003, 5e-7, 30e-3),
    "usf-sam": (50e3, 0.002, 5e-7, 7e-3),
    "gansett": (32e3, 0.003, 1e-6, 18e-3),
    "stella": (30e3, 0.003, 1e-7, 30e-3),
}
DEFAULT_WAYPOINTS = ((6000.0, 0.0), (6000.0, 6000.0), (0.0, 6000.0), (0.0, 0.0))
DEFAULT_MAX_FLOW = 0.15

_TOP = {"preset", "scenario", "seed", "basis", "gains", "detection", "online", "sim"}
_SECTIONS = {
    "basis": {"n", "sigma", "omega", "phase", "centers", "sigmas"},
    "gains": {"K", "gamma_bar", "s"},
    "detection": {"v_min", "v_max", "gamma_f", "debounce", "burn_in"},
    "online": {"dt", "turn_window"},
    "sim": {"v_true", "duration", "dt", "surfacing_interval", "segment_subsample",
            "position_noise", "heading_noise", "turn_rate", "start", "epoch", "origin",
            "waypoints", "loop", "capture_radius", "schedule", "flow", "injections"},
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    seed: int
    preset: str
    gains: EstimatorGains
    basis: BasisSet
    detection: DetectionConfig
    sim: SimConfig
    injections: tuple = ()
    online_dt: float = 10.0
    turn_window: float = DEFAULT_TURN_WINDOW
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def with_seed(self, seed: int) -> "RunConfig":
        """Same configuration, new seed; a drawn flow is redrawn from it."""
        raw = json.loads(json.dumps(self.raw))
        raw["seed"] = int(seed)
        return from_dict(raw)


def _num(d: dict, key: str, default, where: str, integer=False):
    v = d.get(key, default)
    name = f"{where}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"expected a number, got {v!r}", name)
    if not math.isfinite(v):
        raise ConfigurationError("must be finite", name)
    if integer:
        if int(v) != v:
            raise ConfigurationError(f"expected an integer, got {v!r}", name)
        return int(v)
    return float(v)


def _points(v, name: str):
    try:
        pts = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigurationError("expected a list of [x, y] pairs", name) from None
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0 or not np.all(np.isfinite(pts)):
        raise ConfigurationError("expected a non-empty list of finite [x, y] pairs", name)
    return tuple((float(x), float(y)) for x, y in pts)


def _section(raw: dict, key: str) -> dict:
    d = raw.get(key, {})
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigurationError("expected an object", key)
    unknown = set(d) - _SECTIONS[key]
    if unknown:
        raise ConfigurationError(f"unknown field(s) {sorted(unknown)}", f"{key}.{sorted(unknown)[0]}")
    return d


def _basis(b: dict, width: float, bbox) -> BasisSet:
    sigma = _num(b, "sigma", width, "basis")
    omega = _num(b, "omega", DEFAULT_OMEGA, "basis")
    phase = _num(b, "phase", 0.0, "basis")
    if "centers" in b and b["centers"] is not None:
        centers = _points(b["centers"], "basis.centers")
        n = _num(b, "n", len(centers), "basis", integer=True)
        if n != len(centers):
            raise ConfigurationError(f"n={n} but {len(centers)} centres given", "basis.n")
    else:
        n = _num(b, "n", 4, "basis", integer=True)
        k = int(round(math.sqrt(n))) if n > 0 else 0
        if n < 1 or k * k != n:
            raise ConfigurationError(f"n={n} is not a square; give explicit centres", "basis.n")
        grid = BasisSet.grid(bbox, sigma, omega, phase, shape=(k, k))
        centers = tuple(bf.center for bf in grid)
    sigmas = b.get("sigmas")
    if sigmas is None:
        sigmas = [sigma] * n
    if not isinstance(sigmas, list) or len(sigmas) != n:
        raise ConfigurationError(f"expected {n} widths", "basis.sigmas")
    try:
        return BasisSet(BasisFunction(c, float(s), omega, phase) for c, s in zip(centers, sigmas))
    except (TypeError, ValueError) as exc:
        field_name = getattr(exc, "field", None)
        raise ConfigurationError(str(exc), f"basis.{field_name or 'sigmas'}") from None


def _plan(s: dict) -> HeadingPlan:
    sched = s.get("schedule")
    if sched is not None:
        if "waypoints" in s:
            raise ConfigurationError("give waypoints or a schedule, not both", "sim.schedule")
        if not isinstance(sched, dict) or set(sched) != {"times", "headings"}:
            raise ConfigurationError("schedule needs exactly 'times' and 'headings'", "sim.schedule")
        try:
            return HeadingPlan(times=tuple(sched["times"]), headings=tuple(sched["headings"]))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc), "sim.schedule") from None
    wps = _points(s.get("waypoints", DEFAULT_WAYPOINTS), "sim.waypoints")
    loop = s.get("loop", True)
    if not isinstance(loop, bool):
        raise ConfigurationError("expected true or false", "sim.loop")
    cr = s.get("capture_radius")
    if cr is not None:
        cr = _num(s, "capture_radius", None, "sim")
        if not cr > 0:
            raise ConfigurationError("must be > 0", "sim.capture_radius")
    return HeadingPlan(waypoints=wps, loop=loop, capture_radius=cr)


def _injections(v) -> tuple:
    if v is None:
        return ()
    if not isinstance(v, list):
        raise ConfigurationError("expected a list", "sim.injections")
    out = []
    for i, d in enumerate(v):
        where = f"sim.injections[{i}]"
        if not isinstance(d, dict) or not set(d) <= {"kind", "t_start", "t_end", "magnitude"}:
            raise ConfigurationError("expected {kind, t_start, t_end, magnitude}", where)
        if d.get("kind") not in ("speed_degradation", "speed_dropout", "heading_disturbance"):
            raise ConfigurationError(f"unknown kind {d.get('kind')!r}", f"{where}.kind")
        t_end = math.inf if d.get("t_end") is None else _num(d, "t_end", None, where)
        try:
            out.append(AnomalyInjection(d["kind"], _num(d, "t_start", None, where), t_end,
                                        _num(d, "magnitude", 0.5, where)))
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], f"{where}.{exc.field}") from None
    return tuple(out)


def _relabel(exc: ConfigurationError, section: str) -> ConfigurationError:
    return ConfigurationError(str(exc).split(": ", 1)[-1], f"{section}.{exc.field}")


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("top level must be an object", "config")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigurationError(f"unknown field(s) {sorted(unknown)}", sorted(unknown)[0])
    preset = raw.get("preset", "franklin")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; one of {sorted(PRESETS)}", "preset")
    width, k_gain, gamma_bar, s_gain = PRESETS[preset]
    scenario = raw.get("scenario", "default")
    if not isinstance(scenario, str) or not scenario or any(c in scenario for c in "\n\r,"):
        raise ConfigurationError("expected a short single-line name", "scenario")
    seed = _num(raw, "seed", 0, "config", integer=True)
    if seed < 0:
        raise ConfigurationError("must be >= 0", "seed")

    s = _section(raw, "sim")
    plan = _plan(s)
    start = _points([s.get("start", (0.0, 0.0))], "sim.start")[0]
    bbox = plan.bbox(start) if plan.is_waypoint else (start[0] - 5e3, start[1] - 5e3, start[0] + 5e3, start[1] + 5e3)
    basis = _basis(_section(raw, "basis"), width, bbox)

    g = _section(raw, "gains")
    K = g.get("K", k_gain)
    try:
        gains = EstimatorGains(K=np.array(K, dtype=float), gamma_bar=_num(g, "gamma_bar", gamma_bar, "gains"),
                               s=_num(g, "s", s_gain, "gains"))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], "gains." + getattr(exc, "field", "K")) from None

    flow_d = s.get("flow", {}) or {}
    if not isinstance(flow_d, dict) or not set(flow_d) <= {"theta", "max_speed"}:
        raise ConfigurationError("expected {theta} or {max_speed}", "sim.flow")
    if "theta" in flow_d:
        try:
            flow = FlowParameters(np.array(flow_d["theta"], dtype=float))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], "sim.flow.theta") from None
        if flow.n != len(basis):
            raise ConfigurationError(f"theta has {flow.n} columns for {len(basis)} basis functions", "sim.flow.theta")
    else:
        max_speed = _num(flow_d, "max_speed", DEFAULT_MAX_FLOW, "sim.flow")
        if max_speed < 0:
            raise ConfigurationError("must be >= 0", "sim.flow.max_speed")
        flow = random_flow(basis, flow_rng(seed), max_speed, bbox)

    origin = s.get("origin")
    if origin is not None:
        origin = _points([origin], "sim.origin")[0]
    epoch = s.get("epoch", DEFAULT_EPOCH)
    if not isinstance(epoch, str):
        raise ConfigurationError("expected an ISO-8601 string", "sim.epoch")
    from .records import parse_epoch
    try:
        parse_epoch(epoch)
    except FormatError as exc:
        raise ConfigurationError(str(exc), "sim.epoch") from None
    try:
        sim = SimConfig(
            basis=basis, flow=flow, heading_plan=plan,
            v_true=_num(s, "v_true", 0.2, "sim"),
            duration=_num(s, "duration", 7 * 86400.0, "sim"),
            dt=_num(s, "dt", 10.0, "sim"),
            surfacing_interval=_num(s, "surfacing_interval", 4 * 3600.0, "sim"),
            segment_subsample=_num(s, "segment_subsample", 180, "sim", integer=True),
            rng_seed=seed,
            position_noise=_num(s, "position_noise", 0.0, "sim"),
            heading_noise=_num(s, "heading_noise", 0.0, "sim"),
            start=start, epoch=epoch, origin=origin,
            turn_rate=_num(s, "turn_rate", 0.002, "sim"),
        )
    except ConfigurationError as exc:
        if exc.field and "." in exc.field:
            raise
        raise _relabel(exc, "sim") from None
    injections = _injections(s.get("injections"))
    try:
        from ..simulator import _validate_injections
        _validate_injections(injections)
    except ConfigurationError as exc:
        raise _relabel(exc, "sim") from None

    d = _section(raw, "detection")
    burn_in = d.get("burn_in")
    burn_in = DEFAULT_BURN_IN_FRACTION * sim.duration if burn_in is None else _num(d, "burn_in", None, "detection")
    try:
        detection = DetectionConfig(
            v_min=_num(d, "v_min", 0.15, "detection"), v_max=_num(d, "v_max", 0.25, "detection"),
            gamma_f=_num(d, "gamma_f", 1.0, "detection"), debounce=_num(d, "debounce", 1800.0, "detection"),
            burn_in=burn_in,
        )
    except ConfigurationError as exc:
        raise _relabel(exc, "detection") from None

    o = _section(raw, "online")
    online_dt = _num(o, "dt", sim.dt, "online")
    turn_window = _num(o, "turn_window", DEFAULT_TURN_WINDOW, "online")
    if not online_dt > 0:
        raise ConfigurationError("must be > 0", "online.dt")
    if turn_window < 0:
        raise ConfigurationError("must be >= 0", "online.turn_window")

    return RunConfig(scenario, seed, preset, gains, basis, detection, sim, injections,
                     online_dt, turn_window, raw=json.loads(json.dumps(raw)))


def to_dict(cfg: RunConfig) -> dict:
    """Fully resolved form; ``from_dict(to_dict(c)) == c``."""
    sim = cfg.sim
    plan = sim.heading_plan
    sim_d = {
        "v_true": sim.v_true, "duration": sim.duration, "dt": sim.dt,
        "surfacing_interval": sim.surfacing_interval, "segment_subsample": sim.segment_subsample,
        "position_noise": sim.position_noise, "heading_noise": sim.heading_noise,
        "turn_rate": sim.turn_rate, "start": list(sim.start), "epoch": sim.epoch,
        "origin": None if sim.origin is None else list(sim.origin),
    }
    if plan.is_waypoint:
        sim_d.update(waypoints=[list(w) for w in plan.waypoints], loop=plan.loop,
                     capture_radius=plan.capture_radius)
    else:
        sim_d["schedule"] = {"times": list(plan.times), "headings": list(plan.headings)}
    sim_d["flow"] = {"theta": sim.flow.theta.tolist()}
    sim_d["injections"] = [
        {"kind": i.kind, "t_start": i.t_start, "t_end": None if math.isinf(i.t_end) else i.t_end,
         "magnitude": i.magnitude}
        for i in cfg.injections
    ]
    b0 = cfg.basis[0]
    det = cfg.detection
    return {
        "preset": cfg.preset,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "basis": {"n": len(cfg.basis), "sigma": b0.sigma, "omega": b0.omega, "phase": b0.phase,
                  "centers": [list(b.center) for b in cfg.basis], "sigmas": [b.sigma for b in cfg.basis]},
        "gains": {"K": cfg.gains.K.tolist(), "gamma_bar": cfg.gains.gamma_bar, "s": cfg.gains.s},
        "detection": {"v_min": det.v_min, "v_max": det.v_max, "gamma_f": det.gamma_f,
                      "debounce": det.debounce, "burn_in": det.burn_in},
        "online": {"dt": cfg.online_dt, "turn_window": cfg.turn_window},
        "sim": sim_d,
    }


def loads_config(text: str, path=None) -> RunConfig:
    text = text.strip()
    if not text:
        return from_dict({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    return from_dict(raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read config: {exc.strerror}", None, path) from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config is not valid UTF-8", None, path) from None
    return loads_config(text, path)


def dumps_config(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2) + "\n"


def dump_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def override(cfg: RunConfig, **detection) -> RunConfig:
    """Replace detection fields, e.g. from command-line flags; ``None`` values are ignored."""
    fields = {k: v for k, v in detection.items() if v is not None}
    if not fields:
        return cfg
    try:
        return replace(cfg, detection=replace(cfg.detection, **fields))
    except ConfigurationError as exc:
        raise _relabel(exc, "detection") from None
