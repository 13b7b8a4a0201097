"""Run configuration: one text file of ``section.key = <json value>`` lines.

Unspecified keys keep their defaults, which reproduce the reference CSTR
setup. ``serialize`` writes every key, so a serialized file is a complete
record of a run and its SHA-256 digest identifies the configuration.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass

from .cstr import CstrParams
from .errors import ConfigError, MPCTError
from .experiment import ControllerConfig, PlantConfig, ScenarioSpec, controller_grid
from .validation import IndicatorBounds, ValidationPlan


@dataclass(frozen=True)
class GridConfig:
    eta_theta: tuple = (0.0, 1.5, 3.0)
    eta_c: tuple = (0.0, 0.04, 0.08)
    eta_p: tuple = (0.0, 10.0, 20.0)
    beta: tuple = (100.0, 300.0)


@dataclass(frozen=True)
class ValidationConfig:
    eps: float = 0.03
    delta: float = 1e-6
    r: int = 5
    K: int = 2
    N_s: int = None
    verify: int = 0


@dataclass(frozen=True)
class SimulateConfig:
    """Single-run scenario. ``kind`` is ``"random"`` or ``"equilibrium"``."""

    kind: str = "random"
    index: int = 0
    noise: bool = True
    y_r1: tuple = None
    y_r2: tuple = None
    t_r: int = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    indicators: IndicatorBounds = field(default_factory=IndicatorBounds)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def controllers(self):
        g = self.grid
        return controller_grid(self.controller, g.eta_theta, g.eta_c, g.eta_p, g.beta)

    def plan(self):
        v = self.validation
        return ValidationPlan(v.eps, v.delta, v.r, len(self.controllers()), v.K, v.N_s)


# -- flattening -----------------------------------------------------------

def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def flatten(cfg, prefix=""):
    """``{dotted.path: json-compatible value}`` in declaration order."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        path = prefix + f.name
        if is_dataclass(value):
            out.update(flatten(value, path + "."))
        else:
            out[path] = _plain(value)
    return out


def _coerce(path, value, default):
    """Match the type of ``value`` to that of the default it replaces."""
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true or false, got {value!r}")
        return value
    if isinstance(value, list):
        elem = default[0] if isinstance(default, tuple) and default else 0.0
        return tuple(_coerce(path, v, elem) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if isinstance(default, int) or default is None and isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    return float(value)


def _build(cls, values, prefix):
    if not isinstance(values, dict):
        raise ConfigError(prefix.rstrip("."), "is a section, not a value")
    kwargs = {}
    defaults = cls()
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(prefix + key, "unknown key")
    for name, f in known.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), values.get(name, {}), prefix + name + ".")
        elif name in values:
            kwargs[name] = _coerce(prefix + name, values[name], default)
    try:
        return cls(**kwargs)
    except MPCTError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None


def _nest(flat):
    tree = {}
    for path, value in flat.items():
        node = tree
        parts = path.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(path, "key is both a value and a section")
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(path, "key is a section, not a value")
        node[parts[-1]] = value
    return tree


def from_flat(flat):
    cfg = _build(RunConfig, _nest(flat), "")
    validate(cfg)
    return cfg


# -- validation -----------------------------------------------------------

def _positive(path, v):
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise ConfigError(path, f"must be positive, got {v!r}")


def _diag(path, v, n):
    if not isinstance(v, tuple) or len(v) != n:
        raise ConfigError(path, f"expected a list of {n} numbers")
    for x in v:
        _positive(path, x)


def validate(cfg):
    c = cfg.controller
    if c.N < 1:
        raise ConfigError("controller.N", "must be at least 1")
    for name in ("rho", "eps_p", "eps_d"):
        _positive("controller." + name, getattr(c, name))
    if c.max_iter < 1:
        raise ConfigError("controller.max_iter", "must be at least 1")
    if c.iter_budget is not None and c.iter_budget < 1:
        raise ConfigError("controller.iter_budget", "must be at least 1")
    for name, n in (("Q", 6), ("T", 6), ("R", 2), ("S", 2), ("Nx", 6), ("Nu", 2), ("Nc", 2),
                    ("Q_obs", 8), ("R_obs", 2)):
        _diag("controller." + name, getattr(c, name), n)
    if isinstance(c.beta, tuple):
        for x in c.beta:
            _positive("controller.beta", x)
    else:
        _positive("controller.beta", c.beta)
    for name in ("eta_theta", "eta_c", "eta_p"):
        v = getattr(c, name)
        if not v >= 0:
            raise ConfigError("controller." + name, "back-off must be nonnegative")
    g = cfg.grid
    for name in ("eta_theta", "eta_c", "eta_p", "beta"):
        v = getattr(g, name)
        if not isinstance(v, tuple) or not v:
            raise ConfigError("grid." + name, "expected a nonempty list")
        if any(not x >= 0 for x in v) or name == "beta" and any(x <= 0 for x in v):
            raise ConfigError("grid." + name, "values out of range")
    v = cfg.validation
    if not 0 < v.eps < 1:
        raise ConfigError("validation.eps", "must lie in (0, 1)")
    if not 0 < v.delta < 1:
        raise ConfigError("validation.delta", "must lie in (0, 1)")
    if v.r < 1:
        raise ConfigError("validation.r", "must be at least 1")
    if v.K < 1:
        raise ConfigError("validation.K", "must be at least 1")
    if v.N_s is not None and v.N_s < v.r:
        raise ConfigError("validation.N_s", "must be at least r")
    if v.verify < 0:
        raise ConfigError("validation.verify", "must be nonnegative")
    s = cfg.scenario
    if s.N_t < 1 or s.init_steps < 0:
        raise ConfigError("scenario", "N_t must be positive and init_steps nonnegative")
    if not 0 <= s.tr_range[0] <= s.tr_range[1] <= s.N_t:
        raise ConfigError("scenario.tr_range", "must satisfy 0 <= lo <= hi <= N_t")
    for name in ("cB_range", "pB_range"):
        r = getattr(s, name)
        if len(r) != 2 or not r[0] <= r[1]:
            raise ConfigError("scenario." + name, "expected [lo, hi] with lo <= hi")
    p = cfg.plant
    _positive("plant.Ts", p.Ts)
    if p.substeps < 1:
        raise ConfigError("plant.substeps", "must be at least 1")
    sim = cfg.simulate
    if sim.kind not in ("random", "equilibrium"):
        raise ConfigError("simulate.kind", "must be \"random\" or \"equilibrium\"")
    for name in ("y_r1", "y_r2"):
        val = getattr(sim, name)
        if val is not None and (not isinstance(val, tuple) or len(val) != 2):
            raise ConfigError("simulate." + name, "expected [c_B, p_B]")
    if sim.t_r is not None and not 0 <= sim.t_r <= s.N_t:
        raise ConfigError("simulate.t_r", "outside 0..N_t")
    if cfg.jobs < 1:
        raise ConfigError("jobs", "must be at least 1")
    return cfg


# -- text format ----------------------------------------------------------

def parse(text):
    """Parse ``key.path = value`` lines on top of the defaults."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "missing key")
        try:
            flat[key] = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(key, f"value {value!r} is not valid JSON") from None
    return from_flat(flat)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None


def serialize(cfg):
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in flatten(cfg).items())


RUN_CONTROL_KEYS = ("out", "jobs")


def digest(cfg):
    """SHA-256 of the serialized config, excluding where and how fast it runs."""
    text = "".join(f"{k} = {json.dumps(v)}\n" for k, v in flatten(cfg).items()
                   if k not in RUN_CONTROL_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()


def with_overrides(cfg, **kw):
    """Apply command-line overrides given as dotted paths (``None`` skipped)."""
    flat = flatten(cfg)
    for path, value in kw.items():
        if value is not None:
            flat[path.replace("__", ".")] = value
    return from_flat(flat)


def default_params_overrides(cfg):
    """Plant parameters that differ from the built-in defaults."""
    d = CstrParams()
    return {f.name: getattr(cfg.plant.params, f.name) for f in fields(CstrParams)
            if getattr(cfg.plant.params, f.name) != getattr(d, f.name)}
