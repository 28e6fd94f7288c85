"""Sectioned INI run configuration.

Every section is optional.  Keys are case-sensitive and unknown sections or
keys are rejected.  Example::

    [run]
    seed = 1
    threads = 1

    [simulate]
    duration = 2880

    [fit]
    free = all
    init = perturbed
    train_stop = 1440

    [profile]
    param = C_c
    pinned = R_ce
"""
import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .estimate import RETUNE_SET, FitSpec, OptimizerSettings, perturbed
from .model import DEFAULT_TRUTH, PARAM_NAMES, ThermalParams, ValidationError
from .simulate import InputProfile, SimConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending location."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 1
    out: str = "out"


@dataclass(frozen=True)
class SimulateSection:
    setpoint: float = -80.0
    deadband: float = 0.5
    duration: float = 2880.0
    sample_dt: float = 1.0
    substeps: int = 10
    burn_in: float = 720.0


@dataclass(frozen=True)
class FitSection:
    free: tuple = PARAM_NAMES
    init: str = "perturbed"          # "truth" or "perturbed"
    init_factor: float = 2.0
    init_seed: int = 0
    method: str = "nelder-mead"
    max_iters: int = 4000
    tolerance: float = 1e-6
    restarts: int = 5
    jitter: float = 0.5
    hessian_step: float = 1e-4
    train_start: int = 0
    train_stop: Optional[int] = None


@dataclass(frozen=True)
class ProfileSection:
    param: str = "C_c"
    points: int = 21
    factor: float = 30.0
    pinned: tuple = ()               # held at the base-fit estimates
    partners: tuple = ("R_ce",)
    cold_start: bool = False
    restarts: int = 1
    max_iters: int = 3000


@dataclass(frozen=True)
class PredictSection:
    warmup: int = 0                  # samples filtered before the open-loop prediction


@dataclass(frozen=True)
class DiagnoseSection:
    max_lag: int = 40
    burn_in: int = 10


@dataclass(frozen=True)
class RetuneSection:
    free: tuple = RETUNE_SET
    restarts: int = 2
    max_iters: int = 4000


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    inputs: InputProfile = field(default_factory=InputProfile)
    truth: ThermalParams = DEFAULT_TRUTH
    fit: FitSection = field(default_factory=FitSection)
    init: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    profile: ProfileSection = field(default_factory=ProfileSection)
    predict: PredictSection = field(default_factory=PredictSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    retune: RetuneSection = field(default_factory=RetuneSection)

    def with_overrides(self, seed=None, threads=None, out=None) -> "RunConfig":
        changes = {k: v for k, v in (("seed", seed), ("threads", threads), ("out", out)) if v is not None}
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **changes)) if changes else self

    def sim_config(self) -> SimConfig:
        s = self.simulate
        return SimConfig(
            setpoint=s.setpoint, deadband=s.deadband, duration=s.duration, sample_dt=s.sample_dt,
            substeps=s.substeps, seed=self.run.seed, burn_in=s.burn_in, input_profile=self.inputs,
        )

    def optimizer(self) -> OptimizerSettings:
        f = self.fit
        return OptimizerSettings(
            method=f.method, max_iters=f.max_iters, tolerance=f.tolerance, restarts=f.restarts,
            jitter=f.jitter, seed=self.run.seed, threads=self.run.threads,
        )

    def initial_params(self) -> ThermalParams:
        f = self.fit
        base = self.truth if f.init == "truth" else perturbed(self.truth, f.init_factor, f.init_seed)
        return base.replace(**self.init) if self.init else base

    def fit_spec(self) -> FitSpec:
        return FitSpec.with_free(
            self.initial_params(), self.fit.free, bounds=dict(self.bounds),
            optimizer=self.optimizer(), hessian_step=self.fit.hessian_step,
        )


# --- parsing -----------------------------------------------------------------

_SECTIONS = {
    "run": RunSection, "simulate": SimulateSection, "inputs": InputProfile, "fit": FitSection,
    "profile": ProfileSection, "predict": PredictSection, "diagnose": DiagnoseSection,
    "retune": RetuneSection,
}
_PARAM_SECTIONS = ("truth", "init", "bounds")
_NAME_LISTS = {("fit", "free"), ("profile", "pinned"), ("profile", "partners"), ("retune", "free")}


def _names(raw: str, where: str) -> tuple:
    if raw.strip().lower() == "all":
        return PARAM_NAMES
    names = tuple(n.strip() for n in raw.split(",") if n.strip())
    for n in names:
        if n not in PARAM_NAMES:
            raise ConfigError(f"{where}: unknown parameter {n!r}")
    return names


def _convert(kind, raw: str, where: str):
    origin = typing.get_origin(kind)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(kind) if a is not type(None)][0]
        if raw.strip().lower() in ("", "none"):
            return None
        return _convert(inner, raw, where)
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {kind}")


def _section(cls, sec, name: str, source: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in sec.items():
        where = f"{source} [{name}] {key}"
        if key not in known:
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(known))})")
        if (name, key) in _NAME_LISTS:
            values[key] = _names(raw, where)
        else:
            values[key] = _convert(hints[key], raw, where)
    try:
        return cls(**values)
    except (ValidationError, ValueError, TypeError) as e:
        raise ConfigError(f"{source} [{name}]: {e}") from e


def _param_section(sec, name: str, source: str):
    out = {}
    for key, raw in sec.items():
        where = f"{source} [{name}] {key}"
        if key not in PARAM_NAMES:
            raise ConfigError(f"{where}: unknown parameter")
        if name == "bounds":
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ConfigError(f"{where}: expected 'lo, hi'")
            lo, hi = (_convert(float, p, where) for p in parts)
            if not lo < hi:
                raise ConfigError(f"{where}: lower bound must be below upper bound")
            out[key] = (lo, hi)
        else:
            out[key] = _convert(float, raw, where)
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e
    kwargs = {}
    for name in cp.sections():
        sec = cp[name]
        if name in _SECTIONS:
            kwargs[name] = _section(_SECTIONS[name], sec, name, source)
        elif name in _PARAM_SECTIONS:
            kwargs[name] = _param_section(sec, name, source)
        else:
            allowed = ", ".join(sorted(list(_SECTIONS) + list(_PARAM_SECTIONS)))
            raise ConfigError(f"{source} [{name}]: unknown section (allowed: {allowed})")
    if "truth" in kwargs:
        try:
            kwargs["truth"] = DEFAULT_TRUTH.replace(**kwargs["truth"])
        except ValidationError as e:
            raise ConfigError(f"{source} [truth]: {e}") from e
    cfg = RunConfig(**kwargs)
    _cross_check(cfg, source)
    return cfg


def _cross_check(cfg: RunConfig, source: str):
    f = cfg.fit
    if f.init not in ("truth", "perturbed"):
        raise ConfigError(f"{source} [fit] init: expected 'truth' or 'perturbed', got {f.init!r}")
    if not f.free:
        raise ConfigError(f"{source} [fit] free: at least one parameter must be free")
    if cfg.run.threads < 1:
        raise ConfigError(f"{source} [run] threads: must be >= 1")
    if cfg.profile.points < 1:
        raise ConfigError(f"{source} [profile] points: must be >= 1")
    try:
        cfg.sim_config()
        cfg.fit_spec()
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from e
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Render ``cfg`` as INI text that ``parse_config`` reads back to an equal config."""
    lines = []

    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(v)
        if v is None:
            return "none"
        return repr(v) if isinstance(v, float) else str(v)

    for name, cls in _SECTIONS.items():
        sec = getattr(cfg, name)
        lines.append(f"[{name}]")
        lines += [f"{f.name} = {fmt(getattr(sec, f.name))}" for f in dataclasses.fields(cls)]
        lines.append("")
    lines.append("[truth]")
    lines += [f"{n} = {getattr(cfg.truth, n)!r}" for n in PARAM_NAMES]
    lines.append("")
    if cfg.init:
        lines.append("[init]")
        lines += [f"{n} = {v!r}" for n, v in cfg.init.items()]
        lines.append("")
    if cfg.bounds:
        lines.append("[bounds]")
        lines += [f"{n} = {lo!r}, {hi!r}" for n, (lo, hi) in cfg.bounds.items()]
        lines.append("")
    return "\n".join(lines)

