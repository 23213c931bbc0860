"""Experiment configuration: strict INI-style key-value files.

Sections hold typed keys; unknown sections or keys are rejected with the
offending name and line number.  All numeric ranges are validated before any
allocation happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .materials import PRESET_KINDS


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        loc = ""
        if key is not None:
            loc += f" (key {key!r}"
            if line is not None:
                loc += f", line {line}"
            loc += ")"
        super().__init__(message + loc)
        self.key = key
        self.line = line


@dataclass
class GridConfig:
    n: int = 8
    length: float = 1.0


@dataclass
class MaterialsConfig:
    epsilon_kind: str = "constant"
    epsilon_params: tuple = (1.0,)
    mu_kind: str = "constant"
    mu_params: tuple = (1.0,)
    x0: tuple = (0.5, 0.5, 0.5)


@dataclass
class SigmaConfig:
    sigma0: float = 1.0
    a: float = 0.25
    profile: str = "indicator"


@dataclass
class TimeConfig:
    dt: float = 0.0625
    T: float = 20.0
    scheme: str = "midpoint"
    record_every: int = 1


@dataclass
class SolverConfig:
    tol: float = 1e-12
    max_iter: int = 10_000


@dataclass
class InitialConfig:
    kind: str = "random_charge_free"
    seed: int = 1
    amplitude: float = 1.0


@dataclass
class ObserveConfig:
    horizons: tuple = (4.0, 8.0, 16.0)
    a: float = 0.25
    iters: int = 48
    seed: int = 0


@dataclass
class ControlConfig:
    target: str = "random_charge_free"
    seed: int = 7
    T: float = 6.0
    a: float = 0.25
    tol: float = 1e-6


@dataclass
class DecayConfig:
    window: tuple = (0.0, 0.0)  # (0,0) selects the default [0.25 T, 0.9 T]
    T_list: tuple = (10.0, 20.0, 40.0)


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json")
    snapshots: bool = False


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    materials: MaterialsConfig = field(default_factory=MaterialsConfig)
    sigma: SigmaConfig = field(default_factory=SigmaConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    observe: ObserveConfig = field(default_factory=ObserveConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    raw_text: str = ""


_INITIAL_KINDS = (
    "zero",
    "random_raw",
    "random_charge_free",
    "random_x",
    "kernel_plus_x",
    "bump",
    "gradient",
)


def _parse_kv(text: str):
    """(section.key) -> (value, line) map from INI-style text."""
    entries = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError("empty section name", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", key=key, line=lineno)
        full = f"{section}.{key}"
        if full in entries:
            raise ConfigError(f"duplicate key {full!r}", key=full, line=lineno)
        entries[full] = (value, lineno)
    return entries


def _take(entries, key, parse, default):
    if key not in entries:
        return default
    value, line = entries.pop(key)
    try:
        return parse(value)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"cannot parse {value!r}: {exc}", key=key, line=line) from None


def _floats(value: str) -> tuple:
    return tuple(float(v) for v in value.replace(",", " ").split())


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _preset(value: str):
    parts = value.split()
    if not parts:
        raise ValueError("empty preset")
    kind, params = parts[0], tuple(float(p) for p in parts[1:])
    if kind not in PRESET_KINDS:
        raise ValueError(f"unknown preset {kind!r} (choices: {', '.join(PRESET_KINDS)})")
    return kind, params


def parse_config(text: str) -> ExperimentConfig:
    entries = _parse_kv(text)
    cfg = ExperimentConfig(raw_text=text)

    cfg.grid.n = _take(entries, "grid.n", int, cfg.grid.n)
    cfg.grid.length = _take(entries, "grid.length", float, cfg.grid.length)

    eps = _take(entries, "materials.epsilon", _preset, (cfg.materials.epsilon_kind, cfg.materials.epsilon_params))
    cfg.materials.epsilon_kind, cfg.materials.epsilon_params = eps
    mu = _take(entries, "materials.mu", _preset, (cfg.materials.mu_kind, cfg.materials.mu_params))
    cfg.materials.mu_kind, cfg.materials.mu_params = mu
    cfg.materials.x0 = _take(entries, "materials.x0", _floats, cfg.materials.x0)

    cfg.sigma.sigma0 = _take(entries, "sigma.sigma0", float, cfg.sigma.sigma0)
    cfg.sigma.a = _take(entries, "sigma.a", float, cfg.sigma.a)
    cfg.sigma.profile = _take(entries, "sigma.profile", str, cfg.sigma.profile)

    cfg.time.dt = _take(entries, "time.dt", float, cfg.time.dt)
    cfg.time.T = _take(entries, "time.T", float, cfg.time.T)
    cfg.time.scheme = _take(entries, "time.scheme", str, cfg.time.scheme)
    cfg.time.record_every = _take(entries, "time.record_every", int, cfg.time.record_every)

    cfg.solver.tol = _take(entries, "solver.tol", float, cfg.solver.tol)
    cfg.solver.max_iter = _take(entries, "solver.max_iter", int, cfg.solver.max_iter)

    cfg.initial.kind = _take(entries, "initial.kind", str, cfg.initial.kind)
    cfg.initial.seed = _take(entries, "initial.seed", int, cfg.initial.seed)
    cfg.initial.amplitude = _take(entries, "initial.amplitude", float, cfg.initial.amplitude)

    cfg.observe.horizons = _take(entries, "observe.horizons", _floats, cfg.observe.horizons)
    cfg.observe.a = _take(entries, "observe.a", float, cfg.observe.a)
    cfg.observe.iters = _take(entries, "observe.iters", int, cfg.observe.iters)
    cfg.observe.seed = _take(entries, "observe.seed", int, cfg.observe.seed)

    cfg.control.target = _take(entries, "control.target", str, cfg.control.target)
    cfg.control.seed = _take(entries, "control.seed", int, cfg.control.seed)
    cfg.control.T = _take(entries, "control.T", float, cfg.control.T)
    cfg.control.a = _take(entries, "control.a", float, cfg.control.a)
    cfg.control.tol = _take(entries, "control.tol", float, cfg.control.tol)

    cfg.decay.window = _take(entries, "decay.window", _floats, cfg.decay.window)
    cfg.decay.T_list = _take(entries, "decay.T_list", _floats, cfg.decay.T_list)

    cfg.output.directory = _take(entries, "output.directory", str, cfg.output.directory)
    cfg.output.formats = _take(entries, "output.formats", lambda v: tuple(v.split()), cfg.output.formats)
    cfg.output.snapshots = _take(entries, "output.snapshots", _bool, cfg.output.snapshots)

    if entries:
        key, (_, line) = next(iter(sorted(entries.items(), key=lambda kv: kv[1][1])))
        raise ConfigError(f"unknown key {key!r}", key=key, line=line)

    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.grid.n < 2:
        raise ConfigError("grid.n must be >= 2", key="grid.n")
    if cfg.grid.length <= 0:
        raise ConfigError("grid.length must be positive", key="grid.length")
    if not (0.0 < cfg.sigma.a < cfg.grid.length / 2):
        raise ConfigError(
            f"sigma.a must satisfy 0 < a < length/2 = {cfg.grid.length / 2}", key="sigma.a"
        )
    if cfg.sigma.sigma0 < 0:
        raise ConfigError("sigma.sigma0 must be >= 0", key="sigma.sigma0")
    if cfg.sigma.profile not in ("indicator", "smoothstep"):
        raise ConfigError(f"unknown sigma.profile {cfg.sigma.profile!r}", key="sigma.profile")
    if cfg.time.dt <= 0:
        raise ConfigError("time.dt must be positive", key="time.dt")
    if cfg.time.T <= 0:
        raise ConfigError("time.T must be positive", key="time.T")
    if cfg.time.scheme not in ("midpoint", "leapfrog"):
        raise ConfigError(f"unknown time.scheme {cfg.time.scheme!r}", key="time.scheme")
    if cfg.time.record_every < 1:
        raise ConfigError("time.record_every must be >= 1", key="time.record_every")
    if cfg.solver.tol <= 0:
        raise ConfigError("solver.tol must be positive", key="solver.tol")
    if cfg.solver.max_iter < 1:
        raise ConfigError("solver.max_iter must be >= 1", key="solver.max_iter")
    if cfg.initial.kind not in _INITIAL_KINDS:
        raise ConfigError(
            f"unknown initial.kind {cfg.initial.kind!r} (choices: {', '.join(_INITIAL_KINDS)})",
            key="initial.kind",
        )
    if not (0.0 < cfg.observe.a < cfg.grid.length / 2):
        raise ConfigError("observe.a must satisfy 0 < a < length/2", key="observe.a")
    if cfg.observe.iters < 1:
        raise ConfigError("observe.iters must be >= 1", key="observe.iters")
    if not (0.0 < cfg.control.a < cfg.grid.length / 2):
        raise ConfigError("control.a must satisfy 0 < a < length/2", key="control.a")
    if cfg.control.tol <= 0:
        raise ConfigError("control.tol must be positive", key="control.tol")
    if len(cfg.decay.window) != 2:
        raise ConfigError("decay.window needs two values", key="decay.window")
    for f in cfg.output.formats:
        if f not in ("csv", "json"):
            raise ConfigError(f"unknown output format {f!r}", key="output.formats")


def read_config(path) -> ExperimentConfig:
    """Parse and validate the experiment configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
