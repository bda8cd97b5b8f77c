"""``magmap`` command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data or domain error,
4 numerical failure or CG non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from .config import RunConfig, load_config
from .data import (downsample_baseline, load_map, load_measurements, make_simulation_dataset, save_map,
                   save_measurements)
from .dski import CGConfig, fit_dski, load_fitted_map, predict_grid, save_fitted_map
from .errors import CapacityError, ConfigError, DataError, MagmapError, NumericalError
from .exact_gp import train_hyperparameters
from .grid import build_grid
from .protocol import EvalConfig, default_padding, run_bench, run_eval
from .render import render

log = logging.getLogger("magmap")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# Data bounds thinner than this fraction of the length scale are widened to
# this half extent, so a single measurement plane still gets a 3D grid.
MIN_EXTENT = 0.1


def _cg(cfg: RunConfig) -> CGConfig:
    return CGConfig(cfg.cg_tol, cfg.cg_max_iters, cfg.precondition)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"missing {flag} (or the matching config key)")
    return value


def _emit(record: dict):
    print(json.dumps(record, sort_keys=True), flush=True)


def fit_bounds(data_bounds: np.ndarray, length_scale: float) -> np.ndarray:
    """Data bounds with degenerate dimensions widened to +-MIN_EXTENT * length_scale."""
    b = np.array(data_bounds, dtype=float)
    for d in range(len(b)):
        lo, hi = b[d]
        if hi - lo < MIN_EXTENT * length_scale:
            mid = 0.5 * (lo + hi)
            b[d] = mid - MIN_EXTENT * length_scale, mid + MIN_EXTENT * length_scale
    return b


def make_grid(cfg: RunConfig, data_bounds):
    if cfg.grid_lower is not None:
        bounds = np.column_stack([cfg.grid_lower, cfg.grid_upper])
    else:
        bounds = fit_bounds(data_bounds, cfg.length_scale)
    if cfg.padding is not None:
        padding = cfg.padding
    elif cfg.boundary == "keys":
        padding = 0
    else:
        padding = default_padding(cfg.grid_counts)
    return build_grid(bounds, cfg.grid_counts, padding=padding, boundary=cfg.boundary)


# -- commands --------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = _require(cfg.output, "--output")
    data = make_simulation_dataset(cfg.area_half_width, cfg.n_points, cfg.hyp, cfg.seed,
                                   subarea_half_width=cfg.subarea_half_width)
    save_measurements(data, out)
    _emit({"command": "synth", "n_points": len(data), "output": str(out)})
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    train = load_measurements(_require(cfg.data, "--data"))
    model_path = _require(cfg.model, "--model")
    if len(train) == 0:
        raise DataError(f"{cfg.data} has no measurements")
    grid = make_grid(cfg, train.bounds())
    hyp = cfg.hyp
    t0 = time.perf_counter()
    if cfg.train_hyperparameters:
        subset = downsample_baseline(train, min(cfg.train_subset, len(train)), cfg.seed)
        hyp = train_hyperparameters(subset, hyp)
    fmap = fit_dski(train, grid, hyp, _cg(cfg), lanczos_T=cfg.lanczos_T, seed=cfg.seed)
    wall = time.perf_counter() - t0
    save_fitted_map(fmap, model_path)
    d = fmap.diagnostics
    _emit({
        "command": "fit", "n_points": len(train), "m_ind": grid.size,
        "J": d["cg_iterations"], "residual": d["cg_residual"], "converged": d["cg_converged"],
        "T": d["lanczos_T"], "lanczos_breakdown": d["lanczos_breakdown"], "wall_time_s": round(wall, 4),
        "hyperparameters": [hyp.length_scale, hyp.signal_variance, hyp.noise_variance],
        "component_means": train.component_means.tolist(), "model": str(model_path),
    })
    if not d["cg_converged"]:
        print(f"error: CG did not converge (relative residual {d['cg_residual']:.3e}); "
              "model written anyway", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _axis(spec, lo: float, hi: float, step: float) -> np.ndarray:
    """Axis from 'lo,hi,n', a single value, or the default range at ``step`` spacing."""
    if spec is None:
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)
    parts = [float(p) for p in str(spec).split(",")]
    if len(parts) == 1:
        return np.array(parts)
    if len(parts) != 3 or parts[2] < 1 or parts[2] != int(parts[2]):
        raise ConfigError(f"lattice axis must be 'value' or 'lo,hi,n', got {spec!r}")
    return np.linspace(parts[0], parts[1], int(parts[2]))


def lattice_axes(grid, cfg: RunConfig, x=None, y=None, z=None) -> tuple:
    (x0, x1), (y0, y1), (z0, z1) = (grid.interior(d) for d in range(3))
    if z is None:
        z = str(cfg.lattice_z if cfg.lattice_z is not None else 0.5 * (z0 + z1))
    return (_axis(x, x0, x1, cfg.lattice_step), _axis(y, y0, y1, cfg.lattice_step),
            _axis(z, z0, z1, cfg.lattice_step))


def cmd_predict(cfg: RunConfig, x=None, y=None, z=None) -> int:
    fmap = load_fitted_map(_require(cfg.model, "--model"))
    out = _require(cfg.output, "--output")
    table = predict_grid(fmap, lattice_axes(fmap.grid, cfg, x, y, z))
    save_map(table, out)
    _emit({"command": "predict", "rows": len(table.mean), "shape": list(table.shape), "output": str(out)})
    return EXIT_OK


def eval_config(cfg: RunConfig) -> EvalConfig:
    return EvalConfig(
        box_half_width=cfg.area_half_width,
        area_half_width=cfg.subarea_half_width or cfg.area_half_width,
        n_points=cfg.n_points, hyp=cfg.hyp, settings=tuple(cfg.settings), m3=cfg.m3,
        padding=0 if cfg.eval_boundary == "keys" else 2, boundary=cfg.eval_boundary,
        cg=_cg(cfg), repetitions=cfg.repetitions, seed=cfg.seed)


def cmd_eval(cfg: RunConfig) -> int:
    result = run_eval(eval_config(cfg))
    text = result.table()
    print(text)
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text + "\n")
    failures = sum(len(c.errors) for c in result.cells)
    for c in result.cells:
        for method, msg in c.errors.items():
            print(f"warning: setting {c.setting} repetition {c.repetition} {method}: {msg}", file=sys.stderr)
    _emit({"command": "eval", "cells": len(result.cells), "failed_runs": failures})
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    rows = run_bench(cfg.bench_n0, counts=cfg.bench_counts, lanczos_T=cfg.lanczos_T, cg=_cg(cfg),
                     seed=cfg.seed, factors=cfg.bench_factors)
    print("N\tfit_s\tratio\tJ\tT")
    for prev, row in zip([None] + rows[:-1], rows):
        ratio = f"{row.fit_seconds / prev.fit_seconds:.2f}" if prev else "-"
        print(f"{row.n_points}\t{row.fit_seconds:.3f}\t{ratio}\t{row.cg_iterations}\t{row.lanczos_T}")
    _emit({"command": "bench", "n": [r.n_points for r in rows],
           "fit_seconds": [round(r.fit_seconds, 4) for r in rows]})
    return EXIT_OK


def cmd_render(cfg: RunConfig, map_path=None, certainty_path=None, z_index=None) -> int:
    table = load_map(_require(map_path or cfg.data, "--map"))
    out = _require(cfg.output, "--output")
    shape = render(table, out, certainty_path, z_index)
    _emit({"command": "render", "height": shape[0], "width": shape[1], "output": str(out)})
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def _tuple(kind):
    def parse(text):
        try:
            return tuple(kind(p) for p in text.split(",") if p.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated values, got {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--output", "-o")
    common.add_argument("--length-scale", type=float)
    common.add_argument("--signal-variance", type=float)
    common.add_argument("--noise-variance", type=float)
    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--cg-tol", type=float)
    solver.add_argument("--cg-max-iters", type=int)
    solver.add_argument("--lanczos-t", dest="lanczos_T", type=int)

    p = sub.add_parser("synth", parents=[common], help="sample a synthetic curl-free data set")
    p.add_argument("--n-points", type=int)
    p.add_argument("--area-half-width", type=float)
    p.add_argument("--subarea-half-width", type=float)

    p = sub.add_parser("fit", parents=[common, solver], help="fit a D-SKI map to measurements")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--grid-counts", type=_tuple(int))
    p.add_argument("--grid-lower", type=_tuple(float))
    p.add_argument("--grid-upper", type=_tuple(float))
    p.add_argument("--padding", type=_tuple(int))
    p.add_argument("--boundary", choices=("interior", "keys"))
    p.add_argument("--train-hyperparameters", action="store_true", default=None)
    p.add_argument("--train-subset", type=int)

    p = sub.add_parser("predict", parents=[common], help="predict a map on a regular lattice")
    p.add_argument("--model")
    p.add_argument("--lattice-step", type=float)
    p.add_argument("--x", help="'lo,hi,n' or a single value")
    p.add_argument("--y", help="'lo,hi,n' or a single value")
    p.add_argument("--z", help="'lo,hi,n' or a single value")

    p = sub.add_parser("eval", parents=[common, solver], help="run the synthetic accuracy protocol")
    p.add_argument("--settings", type=_tuple(int))
    p.add_argument("--repetitions", type=int)
    p.add_argument("--n-points", type=int)
    p.add_argument("--area-half-width", type=float)
    p.add_argument("--subarea-half-width", type=float)
    p.add_argument("--eval-boundary", choices=("interior", "keys"))

    p = sub.add_parser("bench", parents=[common, solver], help="time fits over N0, 2 N0, 4 N0")
    p.add_argument("--n0", dest="bench_n0", type=int)
    p.add_argument("--bench-counts", type=_tuple(int))
    p.add_argument("--bench-factors", type=_tuple(int))

    p = sub.add_parser("render", parents=[common], help="render a map table as PGM images")
    p.add_argument("--map", dest="map_path")
    p.add_argument("--certainty", dest="certainty_path", help="also write the certainty raster here")
    p.add_argument("--z-index", type=int)
    return parser


_LOCAL = {"config", "command", "verbose", "x", "y", "z", "map_path", "certainty_path", "z_index"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ns = vars(args)
    overrides = {k: v for k, v in ns.items() if k not in _LOCAL}
    try:
        cfg = load_config(ns.get("config"), overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.x, args.y, args.z)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_render(cfg, args.map_path, args.certainty_path, args.z_index)
    except (ConfigError, CapacityError) as exc:
        code, msg = EXIT_CONFIG, exc
    except DataError as exc:
        code, msg = EXIT_DATA, exc
    except NumericalError as exc:
        code, msg = EXIT_NUMERICAL, exc
    except MagmapError as exc:
        code, msg = EXIT_DATA, exc
    except OSError as exc:
        code, msg = EXIT_DATA, f"{exc.filename}: {exc.strerror}"
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
