"""Synthetic accuracy protocol and runtime benchmark.

The accuracy protocol samples a curl-free field in a square box, splits it
80/20, and compares D-SKI maps over a list of grid settings with a dense
GP on all training data and a dense GP on a compute-matched random subset.
RMSE is measured against the noise-free field at the test positions.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import (SIMULATION_HYP, SIMULATION_Z, TrainingSet, as_seed_sequence, budget_match,
                   downsample_baseline, make_simulation_dataset, rmse, sample_grid_prior,
                   split_train_test)
from .dski import CGConfig, fit_dski, predict_mean
from .errors import ConfigError, MagmapError
from .exact_gp import fit_exact, predict_exact
from .grid import InducingGrid, build_grid
from .kernels import Hyperparameters

log = logging.getLogger(__name__)

PAPER_SETTINGS = (10, 20, 40, 80, 100, 200)
METHODS = ("dski", "downsampled", "full")


@dataclass(frozen=True)
class EvalConfig:
    box_half_width: float = 20.0
    area_half_width: float = 20.0
    n_points: int = 6000
    hyp: Hyperparameters = SIMULATION_HYP
    settings: tuple = PAPER_SETTINGS
    m3: int = 5
    # Keys boundary closure lets the grid end exactly on the area edge.
    padding: int = 0
    boundary: str = "keys"
    # Half thickness of the data slab in z, as a fraction of the length scale.
    z_halfwidth: float = 0.1
    train_fraction: float = 0.8
    cg: CGConfig = CGConfig()
    repetitions: int = 10
    seed: int = 0
    dense_cap: int = 18000
    methods: tuple = METHODS

    def __post_init__(self):
        if self.boundary not in ("interior", "keys"):
            raise ConfigError(f"unknown boundary mode {self.boundary!r}")
        if self.boundary == "interior" and self.padding < 1:
            raise ConfigError("interior stencils need padding >= 1")
        if self.area_half_width <= 0 or self.box_half_width <= 0:
            raise ConfigError("area and box half widths must be positive")
        if self.area_half_width > self.box_half_width:
            raise ConfigError("area_half_width must not exceed box_half_width")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.settings or min(self.settings) < 4 or self.m3 < 4:
            raise ConfigError("grid settings must have at least 4 nodes per dimension")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")


def protocol_grid(cfg: EvalConfig, m12: int) -> InducingGrid:
    """Grid over the mapping area; the z slab has the data plane on its middle node."""
    a = cfg.area_half_width
    dz = cfg.z_halfwidth * cfg.hyp.length_scale
    z_pad = 0 if cfg.boundary == "keys" else (cfg.m3 - 2) // 2
    return build_grid([[-a, a], [-a, a], [SIMULATION_Z - dz, SIMULATION_Z + dz]],
                      (m12, m12, cfg.m3), padding=(cfg.padding, cfg.padding, z_pad),
                      boundary=cfg.boundary)


@dataclass
class Cell:
    """Result of one (setting, repetition) pair; NaN marks a failed method."""

    setting: int
    repetition: int
    rmse: dict = field(default_factory=dict)
    cg_iterations: Optional[int] = None
    n_dwn: Optional[int] = None
    errors: dict = field(default_factory=dict)


@dataclass
class EvalResult:
    config: EvalConfig
    cells: list

    def values(self, method: str, setting: int) -> np.ndarray:
        return np.array([c.rmse.get(method, np.nan) for c in self.cells if c.setting == setting])

    def mean(self, method: str, setting: int) -> float:
        return float(np.nanmean(self.values(method, setting)))

    def std(self, method: str, setting: int) -> float:
        return float(np.nanstd(self.values(method, setting)))

    def table(self) -> str:
        methods = [m for m in METHODS if m in self.config.methods]
        head = ["setting", "M_ind"] + [f"{m} mean +- std" for m in methods] + ["J", "N_dwn"]
        lines = ["\t".join(head)]
        for s in self.config.settings:
            cells = [c for c in self.cells if c.setting == s]
            row = [str(s), str(s * s * self.config.m3)]
            for m in methods:
                row.append(f"{self.mean(m, s):.5f} +- {self.std(m, s):.5f}")
            js = [c.cg_iterations for c in cells if c.cg_iterations is not None]
            nd = [c.n_dwn for c in cells if c.n_dwn is not None]
            row.append(f"{min(js)}-{max(js)}" if js else "-")
            row.append(f"{min(nd)}-{max(nd)}" if nd else "-")
            lines.append("\t".join(row))
        return "\n".join(lines)


def simulate(cfg: EvalConfig, repetition: int):
    """Data set and split for one repetition, deterministic in (seed, repetition)."""
    seq = np.random.SeedSequence([cfg.seed, repetition])
    data_seed, split_seed, dwn_seed = seq.spawn(3)
    sub = cfg.area_half_width if cfg.area_half_width < cfg.box_half_width else None
    data = make_simulation_dataset(cfg.box_half_width, cfg.n_points, cfg.hyp, data_seed,
                                   subarea_half_width=sub, cap=cfg.dense_cap)
    train, test = split_train_test(data, cfg.train_fraction, split_seed)
    return train, test, dwn_seed


def run_repetition(cfg: EvalConfig, repetition: int) -> list:
    train, test, dwn_seed = simulate(cfg, repetition)
    truth = test.clean
    cells = [Cell(s, repetition) for s in cfg.settings]
    full_rmse = np.nan
    if "full" in cfg.methods:
        try:
            full_rmse = rmse(predict_exact(fit_exact(train, cfg.hyp, cfg.dense_cap), test.positions)[0], truth)
        except MagmapError as exc:
            for c in cells:
                c.errors["full"] = str(exc)
        for c in cells:
            c.rmse["full"] = full_rmse
    for k, cell in enumerate(cells):
        grid = protocol_grid(cfg, cell.setting)
        if "dski" in cfg.methods or "downsampled" in cfg.methods:
            try:
                fmap = fit_dski(train, grid, cfg.hyp, cfg.cg, lanczos_T=0)
                cell.cg_iterations = fmap.diagnostics["cg_iterations"]
                cell.rmse["dski"] = rmse(predict_mean(fmap, test.positions), truth)
            except MagmapError as exc:
                cell.errors["dski"] = str(exc)
                cell.rmse["dski"] = np.nan
        if "downsampled" in cfg.methods and cell.cg_iterations is not None:
            try:
                report = budget_match(len(train), grid, max(cell.cg_iterations, 1))
                cell.n_dwn = min(report.n_dwn, len(train))
                if cell.n_dwn == len(train) and np.isfinite(full_rmse):
                    cell.rmse["downsampled"] = full_rmse
                else:
                    sub = downsample_baseline(train, cell.n_dwn, np.random.SeedSequence(
                        [int(dwn_seed.generate_state(1)[0]), k]))
                    model = fit_exact(sub, cfg.hyp, cfg.dense_cap)
                    cell.rmse["downsampled"] = rmse(predict_exact(model, test.positions)[0], truth)
            except MagmapError as exc:
                cell.errors["downsampled"] = str(exc)
                cell.rmse["downsampled"] = np.nan
    return cells


def run_eval(cfg: EvalConfig) -> EvalResult:
    cells = []
    for rep in range(cfg.repetitions):
        t0 = time.perf_counter()
        cells.extend(run_repetition(cfg, rep))
        log.info("repetition %d done in %.1f s", rep, time.perf_counter() - t0)
    return EvalResult(cfg, cells)


# -- runtime benchmark -----------------------------------------------------

HALLWAY_BOUNDS = ((-34.0, 34.0), (-5.25, 5.25), (0.9, 1.1))
HALLWAY_HYP = Hyperparameters(0.5, 0.04, 1e-4)


def hallway_dataset(n_points: int, seed=None, counts=(400, 40, 4), bounds=HALLWAY_BOUNDS,
                    hyp: Hyperparameters = HALLWAY_HYP) -> tuple:
    """Large synthetic set over a hallway-sized box, sampled from the gridded prior."""
    if n_points < 1:
        raise ConfigError("n_points must be >= 1")
    grid = build_grid(bounds, counts, padding=default_padding(counts))
    pos_seed, field_seed = as_seed_sequence(seed).spawn(2)
    rng = np.random.default_rng(pos_seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    pos = rng.uniform(lo, hi, size=(n_points, 3))
    Y, clean = sample_grid_prior(grid, pos, hyp, field_seed, return_clean=True)
    return TrainingSet(pos, Y, clean=clean), grid


def default_padding(counts) -> tuple:
    """Two padding cells where the node count allows it, otherwise one."""
    return tuple(min(2, (int(m) - 2) // 2) for m in counts)


@dataclass(frozen=True)
class BenchRow:
    n_points: int
    fit_seconds: float
    cg_iterations: int
    lanczos_T: int


def run_bench(n0: int, counts=(200, 40, 4), lanczos_T: int = 100, cg: CGConfig = CGConfig(),
              seed: int = 0, factors=(1, 2, 4)) -> list:
    """Fit time for N = n0 * factor synthetic hallway points on a fixed grid."""
    if n0 < 1:
        raise ConfigError(f"bench needs at least one data point per fit, got N0 = {n0}")
    rows = []
    for f in factors:
        data, grid = hallway_dataset(n0 * f, seed=[seed, f], counts=counts)
        t0 = time.perf_counter()
        fmap = fit_dski(data, grid, HALLWAY_HYP, cg, lanczos_T=lanczos_T)
        dt = time.perf_counter() - t0
        rows.append(BenchRow(n0 * f, dt, fmap.diagnostics["cg_iterations"], fmap.diagnostics["lanczos_T"]))
    return rows


def with_overrides(cfg: EvalConfig, **kw) -> EvalConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
