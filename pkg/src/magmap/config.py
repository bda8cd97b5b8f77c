"""Run configuration: a flat ``key = value`` text file plus command-line overrides.

Lines are ``key = value``; ``#`` starts a comment.  Tuples are written
comma-separated (``grid_counts = 40, 40, 5``).  Every value is parsed and
checked before any computation starts.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .data import SIMULATION_HYP
from .errors import ConfigError
from .grid import BOUNDARY_MODES
from .kernels import Hyperparameters
from .protocol import PAPER_SETTINGS


@dataclass(frozen=True)
class RunConfig:
    # grid; bounds default to the data bounds
    grid_counts: tuple = (40, 40, 5)
    grid_lower: Optional[tuple] = None
    grid_upper: Optional[tuple] = None
    padding: Optional[tuple] = None
    boundary: str = "interior"
    # hyperparameters
    length_scale: float = SIMULATION_HYP.length_scale
    signal_variance: float = SIMULATION_HYP.signal_variance
    noise_variance: float = SIMULATION_HYP.noise_variance
    train_hyperparameters: bool = False
    train_subset: int = 500
    # solvers
    cg_tol: float = 1e-4
    cg_max_iters: int = 2000
    precondition: bool = True
    lanczos_T: int = 100
    seed: int = 0
    # synthetic data
    area_half_width: float = 20.0
    subarea_half_width: Optional[float] = None
    n_points: int = 6000
    # prediction lattice
    lattice_step: float = 0.1
    lattice_z: Optional[float] = None
    # evaluation and benchmark
    settings: tuple = PAPER_SETTINGS
    m3: int = 5
    repetitions: int = 10
    eval_boundary: str = "keys"
    bench_n0: int = 20000
    bench_counts: tuple = (200, 40, 4)
    bench_factors: tuple = (1, 2, 4)
    # paths
    data: Optional[str] = None
    model: Optional[str] = None
    output: Optional[str] = None

    @property
    def hyp(self) -> Hyperparameters:
        return Hyperparameters(self.length_scale, self.signal_variance, self.noise_variance)

    def validate(self) -> "RunConfig":
        _positive(self, "length_scale", "signal_variance", "noise_variance", "cg_tol", "lattice_step",
                  "area_half_width")
        _at_least(self, 1, "cg_max_iters", "train_subset", "n_points", "repetitions", "bench_n0")
        _at_least(self, 0, "lanczos_T", "seed")
        if len(self.grid_counts) != 3 or min(self.grid_counts) < 4:
            raise ConfigError(f"grid_counts must be three integers >= 4, got {self.grid_counts}")
        if len(self.bench_counts) != 3 or min(self.bench_counts) < 4:
            raise ConfigError(f"bench_counts must be three integers >= 4, got {self.bench_counts}")
        for name in ("boundary", "eval_boundary"):
            if getattr(self, name) not in BOUNDARY_MODES:
                raise ConfigError(f"{name} must be one of {BOUNDARY_MODES}, got {getattr(self, name)!r}")
        if (self.grid_lower is None) != (self.grid_upper is None):
            raise ConfigError("grid_lower and grid_upper must be given together")
        if self.grid_lower is not None:
            if len(self.grid_lower) != 3 or len(self.grid_upper) != 3:
                raise ConfigError("grid_lower and grid_upper need three values each")
            for d, (lo, hi) in enumerate(zip(self.grid_lower, self.grid_upper)):
                if not hi > lo:
                    raise ConfigError(f"grid_lower[{d}] = {lo} must be below grid_upper[{d}] = {hi}")
        if self.padding is not None and (len(self.padding) != 3 or min(self.padding) < 0):
            raise ConfigError(f"padding must be three integers >= 0, got {self.padding}")
        if self.subarea_half_width is not None and not 0 < self.subarea_half_width <= self.area_half_width:
            raise ConfigError("subarea_half_width must lie in (0, area_half_width]")
        if not self.settings or min(self.settings) < 4 or self.m3 < 4:
            raise ConfigError("settings and m3 need at least 4 nodes")
        if not self.bench_factors or min(self.bench_factors) < 1:
            raise ConfigError("bench_factors must be positive integers")
        return self


def _positive(cfg, *names):
    for n in names:
        v = getattr(cfg, n)
        if not v > 0:
            raise ConfigError(f"{n} must be positive, got {v}")


def _at_least(cfg, bound, *names):
    for n in names:
        v = getattr(cfg, n)
        if v < bound:
            raise ConfigError(f"{n} must be >= {bound}, got {v}")


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name: str, default, text: str):
    text = text.strip()
    kind = _KINDS[name]
    if text.lower() in ("none", "") and (default is None or kind is tuple):
        return None
    try:
        if kind is bool:
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(text)
            return low in _TRUE
        if kind is tuple:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            elem = _ELEM.get(name, float)
            return tuple(elem(p) for p in parts)
        return kind(text)
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {text!r}") from None


# Parsed type of each key; Optional fields declare their inner type here.
_KINDS = {f.name: type(f.default) for f in fields(RunConfig)}
_KINDS.update(grid_lower=tuple, grid_upper=tuple, padding=tuple, subarea_half_width=float,
              lattice_z=float, data=str, model=str, output=str)
_ELEM = {"grid_counts": int, "padding": int, "settings": int, "bench_counts": int, "bench_factors": int}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed values; unknown keys are errors."""
    defaults = {f.name: f.default for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, defaults[key], val)
    return values


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file, then non-None overrides; validated."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
        values.update(parse_config(text, str(p)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def with_values(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **kw).validate()
