"""Magnetic field maps by derivative structured kernel interpolation.

Fitting solves ``A alpha = vec(Y^T)`` with ``A = dW K_uu dW^T + sigma_y^2 I``
by preconditioned CG and runs a Lanczos tridiagonalization of A for the
variance caches.  The fitted map keeps only grid-sized caches, so each
query costs one 4^3 stencil regardless of the number of measurements.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .data import MapTable, TrainingSet
from .errors import DataError, NumericalError
from .grid import InducingGrid, build_dW, kron_kuu, stencil_quadratic_forms
from .kernels import Hyperparameters
from .krylov import AOperator, jacobi, kron_mvm, lanczos, pcg, tridiag_cholesky

log = logging.getLogger(__name__)

MAGIC = b"MAGMAP01"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CGConfig:
    tol: float = 1e-4
    max_iters: int = 2000
    precondition: bool = True


@dataclass(frozen=True)
class FittedMap:
    """Trained map: grid, hyperparameters and the prediction caches.

    ``mean_cache`` is ``K_uu dW^T alpha``; ``love_R`` is ``K_uu dW^T Q_T``
    and ``(t_alpha, t_beta)`` are the diagonals of the Lanczos
    tridiagonal.  ``love_R`` is None when the map was fitted without
    variance caches.
    """

    grid: InducingGrid
    hyp: Hyperparameters
    mean_cache: np.ndarray
    love_R: Optional[np.ndarray] = None
    t_alpha: Optional[np.ndarray] = None
    t_beta: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @cached_property
    def kernel(self):
        return kron_kuu(self.grid, self.hyp)

    @cached_property
    def _love_S(self) -> np.ndarray:
        # S = R L^{-T} with T_T = L L^T, so the correction term is (dw S)(dw S)^T.
        ab = tridiag_cholesky(self.t_alpha, self.t_beta)
        St = sla.solve_banded((1, 0), ab, self.love_R.T, check_finite=False)
        return np.ascontiguousarray(St.T)

    @property
    def has_variance(self) -> bool:
        return self.love_R is not None and self.love_R.shape[1] > 0


def fit_dski(train: TrainingSet, grid: InducingGrid, hyp: Hyperparameters,
             cg: CGConfig = CGConfig(), lanczos_T: int = 100, lanczos_start: str = "data",
             seed=None) -> FittedMap:
    """Fit the D-SKI map.

    ``lanczos_T = 0`` skips the variance caches.  ``lanczos_start`` is
    ``"data"`` (normalized vec(Y^T)) or ``"random"`` (seeded Gaussian).
    Non-convergence of CG is reported through ``diagnostics`` and a
    logged warning, not an exception.
    """
    dW = build_dW(grid, train.positions)
    K = kron_kuu(grid, hyp)
    op = AOperator(dW, K, hyp.noise_variance)
    b = train.targets
    precond = jacobi(op.diagonal(grid)) if cg.precondition and len(b) else None
    res = pcg(op, b, tol=cg.tol, max_iters=cg.max_iters, preconditioner=precond)
    if not res.converged:
        log.warning("CG did not reach tolerance %.1e (residual %.3e after %d iterations)",
                    cg.tol, res.residuals[-1], res.iterations)
    mean_cache = kron_mvm(K, dW.rmatvec(res.x))
    diagnostics = {
        "cg_iterations": int(res.iterations),
        "cg_residual": float(res.residuals[-1]),
        "cg_converged": bool(res.converged),
        "lanczos_T": 0,
        "lanczos_breakdown": False,
    }
    R = t_alpha = t_beta = None
    T = min(int(lanczos_T), len(b))
    if T > 0:
        start = b
        if lanczos_start == "random" or not np.any(start):
            start = np.random.default_rng(seed).standard_normal(len(b))
        fac = lanczos(op, start, T)
        R = kron_mvm(K, dW.rmatvec(fac.Q))
        t_alpha, t_beta = fac.alpha, fac.beta
        diagnostics["lanczos_T"] = fac.rank
        diagnostics["lanczos_breakdown"] = bool(fac.breakdown)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t_alpha))):
            raise NumericalError("non-finite variance caches")
    if not np.all(np.isfinite(mean_cache)):
        raise NumericalError("non-finite mean cache")
    return FittedMap(grid, hyp, mean_cache, R, t_alpha, t_beta, diagnostics)


def predict_mean(fmap: FittedMap, positions) -> np.ndarray:
    """Field means (n, 3); accepts a single 3-vector or an (n, 3) array."""
    P = np.asarray(positions, dtype=float)
    dW = build_dW(fmap.grid, P.reshape(-1, 3))
    m = np.einsum("nck,nk->nc", dW.weights, fmap.mean_cache[dW.indices])
    return m[0] if P.ndim == 1 else m


@dataclass(frozen=True)
class VariancePrediction:
    blocks: np.ndarray  # (n, 3, 3)
    clamped: np.ndarray  # (n,) bool: a diagonal entry was negative and set to 0

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.blocks, axis1=1, axis2=2).copy()


def prior_variance(fmap: FittedMap, positions) -> np.ndarray:
    """Interpolated prior blocks dw* K_uu dw*^T, shape (n, 3, 3)."""
    dW = build_dW(fmap.grid, np.asarray(positions, dtype=float).reshape(-1, 3))
    return stencil_quadratic_forms(fmap.kernel, fmap.grid, dW)


def predict_variance(fmap: FittedMap, positions, chunk: int = 2048) -> VariancePrediction:
    """Predictive covariance blocks from the cached Lanczos factors.

    Diagonal entries pushed below zero by the truncated correction are
    clamped to zero; such points are flagged and a warning is logged.
    """
    if not fmap.has_variance:
        raise DataError("map was fitted without variance caches (lanczos_T = 0)")
    P = np.asarray(positions, dtype=float).reshape(-1, 3)
    dW = build_dW(fmap.grid, P)
    blocks = stencil_quadratic_forms(fmap.kernel, fmap.grid, dW)
    S = fmap._love_S
    for start in range(0, len(P), chunk):
        stop = min(start + chunk, len(P))
        G = np.einsum("nck,nkt->nct", dW.weights[start:stop], S[dW.indices[start:stop]])
        blocks[start:stop] -= np.einsum("nct,ndt->ncd", G, G)
    diag = np.diagonal(blocks, axis1=1, axis2=2)
    neg = diag < 0
    clamped = neg.any(axis=1)
    if clamped.any():
        log.warning("clamped negative variance at %d of %d points", int(clamped.sum()), len(P))
        for c in range(3):
            blocks[neg[:, c], c, c] = 0.0
    return VariancePrediction(blocks, clamped)


def predict_grid(fmap: FittedMap, axes, with_variance: bool = True) -> MapTable:
    """Means and variance diagonals on the lattice spanned by ``axes`` (x, y, z).

    With ``with_variance=False`` the variance columns are NaN.
    """
    axes = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in axes)
    if len(axes) != 3:
        raise DataError("lattice needs one axis array per dimension")
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([m.ravel() for m in mesh], axis=1)
    mean = predict_mean(fmap, P)
    if with_variance:
        var = predict_variance(fmap, P).diagonal
    else:
        var = np.full_like(mean, np.nan)
    return MapTable(axes, mean, var)


# -- binary container ------------------------------------------------------


def dumps(fmap: FittedMap) -> bytes:
    """Serialize: magic, version, header length, JSON header, little-endian float64 arrays."""
    arrays = [("mean_cache", fmap.mean_cache)]
    if fmap.has_variance:
        arrays += [("love_R", fmap.love_R), ("t_alpha", fmap.t_alpha), ("t_beta", fmap.t_beta)]
    header = {
        "grid": fmap.grid.to_dict(),
        "hyperparameters": {
            "length_scale": fmap.hyp.length_scale,
            "signal_variance": fmap.hyp.signal_variance,
            "noise_variance": fmap.hyp.noise_variance,
        },
        "diagnostics": fmap.diagnostics,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def loads(buf: bytes) -> FittedMap:
    if buf[:8] != MAGIC:
        raise DataError("not a map file (bad magic header)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported map file version {version}")
    offset = 16
    header = json.loads(buf[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        if offset + 8 * count > len(buf):
            raise DataError("truncated map file")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    h = header["hyperparameters"]
    return FittedMap(
        InducingGrid.from_dict(header["grid"]),
        Hyperparameters(h["length_scale"], h["signal_variance"], h["noise_variance"]),
        arrays["mean_cache"], arrays.get("love_R"), arrays.get("t_alpha"), arrays.get("t_beta"),
        header["diagnostics"],
    )


def save_fitted_map(fmap: FittedMap, path):
    Path(path).write_bytes(dumps(fmap))


def load_fitted_map(path) -> FittedMap:
    return loads(Path(path).read_bytes())
