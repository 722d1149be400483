"""Experiment configuration: a strict TOML schema with line-anchored errors.

Schema (every table and key is optional; unknown keys are rejected)::

    seed = 0                  # master seed
    out = "out"               # output directory
    route = "flow"            # "flow" or "direct"

    [grid]
    lower = [0.0]             # box corner(s); the dimension is len(lower)
    upper = [1.0]
    dx = 0.0078125            # must divide every box edge
    dt = 1e-4                 # must divide T
    T = 0.5

    [modes]                   # default sine family ...
    count = 8
    amplitude = 0.2
    law = "inverse_square"    # "inverse_square", "inverse_power" or "flat"
    power = 2.0
    margin = 0.0
    drift = 0.0
    [[modes.mode]]            # ... or explicit modes; the first one is the drift X^(0)
    kind = "constant"
    amplitude = 0.5
    support_lower = [0.05]
    support_upper = [0.95]
    plateau = 0.8

    [noise]
    sigma = 0.1               # single-path runs
    sigmas = [0.2, 0.1, 0.05] # Monte Carlo ladder, strictly decreasing
    samples = 1000

    [initial]
    kind = "cosine"           # "cosine", "constant" or "tanh"
    amplitude = 1.0
    wavenumber = 1
    offset = 0.0
    value = 0.0
    center = 0.5
    width = 1.4142135623730951

    [event]                   # see sacldp.ldp.EventSpec
    observable = "probe"
    threshold = 0.1
    direction = "above"
    probes = [[0.5]]
    reference = []
    combine = "signed"
    axis = 0

    [optimizer]               # see sacldp.ldp.RateOptions
    mu0 = 100.0
    mu_factor = 10.0
    stages = 3
    maxiter = 200
    grad_step = 1e-5
    intervals = 4

    [analysis]
    paths = 100
    alpha = 0.4
    p = 8
    q = 1
    norm = "sup"
"""

import hashlib
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, SacldpError
from .field import ModeSet
from .grid import SpaceGrid, TimeGrid
from .ldp import EventSpec, RateOptions
from .pde import InitialData

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w


@dataclass(frozen=True)
class GridConfig:
    lower: tuple = (0.0,)
    upper: tuple = (1.0,)
    dx: float = 1.0 / 128
    dt: float = 1e-4
    T: float = 0.5


@dataclass(frozen=True)
class ModesConfig:
    count: int = 8
    amplitude: float = 0.2
    law: str = "inverse_square"
    power: float = 2.0
    margin: float = 0.0
    drift: float = 0.0
    mode: tuple = ()


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.1
    sigmas: tuple = (0.2, 0.1, 0.05)
    samples: int = 1000


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "cosine"
    amplitude: float = 1.0
    wavenumber: int = 1
    offset: float = 0.0
    value: float = 0.0
    center: float = 0.5
    width: float = float(np.sqrt(2.0))


@dataclass(frozen=True)
class EventConfig:
    observable: str = "probe"
    threshold: float = 0.1
    direction: str = "above"
    probes: tuple = ((0.5,),)
    reference: tuple = ()
    combine: str = "signed"
    axis: int = 0


@dataclass(frozen=True)
class OptimizerConfig:
    mu0: float = 100.0
    mu_factor: float = 10.0
    stages: int = 3
    maxiter: int = 200
    grad_step: float = 1e-5
    intervals: int = 4


@dataclass(frozen=True)
class AnalysisConfig:
    paths: int = 100
    alpha: float = 0.4
    p: float = 8.0
    q: float = 1.0
    norm: str = "sup"


SECTIONS = {
    "grid": GridConfig,
    "modes": ModesConfig,
    "noise": NoiseConfig,
    "initial": InitialConfig,
    "event": EventConfig,
    "optimizer": OptimizerConfig,
    "analysis": AnalysisConfig,
}
TOP_LEVEL = ("seed", "out", "route")
MODE_KEYS = {"kind", "amplitude", "direction", "wavenumber", "support_lower", "support_upper", "plateau"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; build the numerical objects with the ``make_*`` methods."""

    seed: int = 0
    out: str = "out"
    route: str = "flow"
    grid: GridConfig = field(default_factory=GridConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    event: EventConfig = field(default_factory=EventConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    source: str = field(default="", compare=False, repr=False)

    def to_dict(self):
        out = {"seed": self.seed, "out": self.out, "route": self.route}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        if not out["modes"]["mode"]:
            del out["modes"]["mode"]
        return out

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def digest(self):
        """SHA-256 of the canonical serialisation; changes iff a field changes."""
        return hashlib.sha256(self.to_toml().encode("utf-8")).hexdigest()

    def with_overrides(self, seed=None, out=None, route=None):
        kw = {k: v for k, v in (("seed", seed), ("out", out), ("route", route)) if v is not None}
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    def make_space(self):
        g = self.grid
        cells = [int(round((u - l) / g.dx)) for l, u in zip(g.lower, g.upper)]
        return SpaceGrid(g.lower, g.upper, cells)

    def make_times(self):
        return TimeGrid.from_step(self.grid.T, self.grid.dt)

    def make_modes(self):
        m = self.modes
        g = self.grid
        if m.mode:
            data = {"lower": list(g.lower), "upper": list(g.upper), "margin": m.margin, "mode": list(m.mode)}
            return ModeSet.from_dict(data)
        return ModeSet.default(len(g.lower), m.count, m.amplitude, m.law, m.power, g.lower, g.upper, m.margin, m.drift)

    def make_initial(self):
        i = self.initial
        if i.kind == "constant":
            return InitialData.constant(i.value)
        if i.kind == "tanh":
            return InitialData.tanh_front(i.center, i.width)
        return InitialData.cosine(i.amplitude, i.wavenumber, i.offset, self.grid.lower[0], self.grid.upper[0])

    def make_event(self):
        e = self.event
        return EventSpec(e.observable, e.threshold, e.direction, e.probes, e.reference, e.combine, e.axis)

    def make_rate_options(self):
        o = self.optimizer
        return RateOptions(o.mu0, o.mu_factor, o.stages, o.maxiter, o.grad_step, o.intervals)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _frozen(v):
    if isinstance(v, list):
        return tuple(_frozen(x) for x in v)
    return v


def _locate(text, table, key):
    """1-based line of ``key = ...`` inside ``[table]`` (top level if ``table`` is None)."""
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        header = re.match(r"^\[\[?\s*([A-Za-z0-9_.]+)\s*\]\]?", s)
        if header:
            current = header.group(1)
            if key is None and current == table:
                return no
            continue
        if key is not None and current == table and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
    return None


def _coerce(value, default, where, line):
    """Check ``value`` against the type of the default and convert lists to tuples."""
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{where}: booleans are not accepted here", line, where)
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer", line, where)
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number", line, where)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string", line, where)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array", line, where)
        return _frozen(value)
    return value


def parse(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", int(m.group(1)) if m else None) from None
    kwargs = {}
    for key, value in data.items():
        if key in TOP_LEVEL:
            line = _locate(text, None, key)
            kwargs[key] = _coerce(value, getattr(ExperimentConfig(), key), key, line)
        elif key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table", _locate(text, None, key), key)
            kwargs[key] = _section(text, key, value)
        else:
            raise ConfigError(f"unknown key {key!r}", _locate(text, None, key) or _locate(text, key, None), key)
    cfg = ExperimentConfig(**kwargs, source=text)
    validate(cfg)
    return cfg


def _section(text, name, table):
    cls = SECTIONS[name]
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kw = {}
    for key, value in table.items():
        where = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"unknown key {where!r}", _locate(text, name, key), where)
        if name == "modes" and key == "mode":
            kw[key] = tuple(_mode_entry(text, i, m) for i, m in enumerate(value))
            continue
        kw[key] = _coerce(value, getattr(defaults, key), where, _locate(text, name, key))
    return cls(**kw)


def _mode_entry(text, i, m):
    where = f"modes.mode[{i}]"
    if not isinstance(m, dict):
        raise ConfigError(f"{where} must be a table", _locate(text, "modes.mode", None), where)
    unknown = set(m) - MODE_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {where}.{key}", _locate(text, "modes.mode", key), f"{where}.{key}")
    return dict(m)


def load(path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def _line(cfg, table, key):
    return _locate(cfg.source, table, key) if cfg.source else None


def _fail(cfg, table, key, message):
    where = key if table is None else f"{table}.{key}"
    raise ConfigError(f"{where}: {message}", _line(cfg, table, key), where)


def validate(cfg: ExperimentConfig):
    """Check the cross-field invariants; raise :class:`ConfigError` naming the field."""
    g = cfg.grid
    if cfg.route not in ("flow", "direct"):
        _fail(cfg, None, "route", "must be 'flow' or 'direct'")
    if len(g.lower) not in (1, 2) or len(g.lower) != len(g.upper):
        _fail(cfg, "grid", "lower", "box corners must have equal length 1 or 2")
    if not g.T > 0:
        _fail(cfg, "grid", "T", "must be positive")
    if not g.dt > 0:
        _fail(cfg, "grid", "dt", "must be positive")
    steps = g.T / g.dt
    if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
        _fail(cfg, "grid", "dt", f"does not divide T={g.T}")
    if not g.dx > 0:
        _fail(cfg, "grid", "dx", "must be positive")
    for lo, hi in zip(g.lower, g.upper):
        cells = (hi - lo) / g.dx
        if hi <= lo:
            _fail(cfg, "grid", "upper", "must exceed lower")
        if abs(cells - round(cells)) > 1e-8 * max(1.0, cells) or round(cells) < 6:
            _fail(cfg, "grid", "dx", "must divide every box edge into at least 6 cells")
    sig = cfg.noise.sigmas
    if not sig or any(not isinstance(s, (int, float)) or s <= 0 for s in sig):
        _fail(cfg, "noise", "sigmas", "values must be positive")
    if any(b >= a for a, b in zip(sig, sig[1:])):
        _fail(cfg, "noise", "sigmas", "values must be strictly decreasing")
    if cfg.noise.sigma < 0:
        _fail(cfg, "noise", "sigma", "must be non-negative")
    if cfg.noise.samples < 100:
        _fail(cfg, "noise", "samples", "must be at least 100")
    if cfg.initial.kind not in ("cosine", "constant", "tanh"):
        _fail(cfg, "initial", "kind", "must be 'cosine', 'constant' or 'tanh'")
    if not 0 <= cfg.analysis.alpha < 1:
        _fail(cfg, "analysis", "alpha", "must lie in [0, 1)")
    if cfg.analysis.paths < 1:
        _fail(cfg, "analysis", "paths", "must be positive")
    # defer the remaining checks to the constructors, anchored to their section
    for table, build in (("modes", cfg.make_modes), ("event", cfg.make_event), ("optimizer", cfg.make_rate_options)):
        try:
            build()
        except ConfigError:
            raise
        except (SacldpError, TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"[{table}] {exc}", _locate(cfg.source, table, None) if cfg.source else None,
                              table) from None
    return cfg
