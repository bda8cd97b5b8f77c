"""Dense reference GP under the scalar potential model, plus exact SoR.

Everything here is cubic in the number of measurements and meant as an
oracle for small problems, a downsampled baseline and a hyperparameter
trainer on data subsets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .data import TrainingSet, downsample_baseline  # noqa: F401  (re-exported baseline)
from .errors import CapacityError, ConfigError, NumericalError
from .grid import InducingGrid, kron_kuu
from .kernels import JITTER, Hyperparameters, curlfree_gram, potential_field_cross

log = logging.getLogger(__name__)

#: Default cap on 3N for dense factorizations.
DENSE_CAP = 6000

_LOG_2PI = np.log(2.0 * np.pi)


def _factor(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return sla.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not numerically positive definite; increase the jitter") from exc


def _check_cap(n3: int, cap: int):
    if n3 > cap:
        raise CapacityError(f"dense problem of size 3N = {n3} exceeds the cap of {cap}")


def _gram(train: TrainingSet, hyp: Hyperparameters) -> np.ndarray:
    A = curlfree_gram(train.positions, train.positions, hyp)
    A[np.diag_indices_from(A)] += hyp.noise_variance + JITTER * hyp.signal_variance
    return A


@dataclass(frozen=True)
class ExactModel:
    train: TrainingSet
    hyp: Hyperparameters
    chol: np.ndarray  # lower Cholesky factor of d2(K_ff) + sigma_y^2 I
    alpha: np.ndarray  # A^{-1} vec(Y^T)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.chol.size == 0:
            return np.zeros_like(b)
        return sla.cho_solve((self.chol, True), b, check_finite=False)


def fit_exact(train: TrainingSet, hyp: Hyperparameters, cap: int = DENSE_CAP) -> ExactModel:
    n3 = 3 * len(train)
    _check_cap(n3, cap)
    if n3 == 0:
        return ExactModel(train, hyp, np.zeros((0, 0)), np.zeros(0))
    L = _factor(_gram(train, hyp), "d2(K_ff) + sigma_y^2 I")
    alpha = sla.cho_solve((L, True), train.targets, check_finite=False)
    return ExactModel(train, hyp, L, alpha)


def prior_block(hyp: Hyperparameters) -> np.ndarray:
    """Prior covariance of the field at any single point: (sigma_f^2 / l^2) I."""
    return hyp.signal_variance / hyp.length_scale**2 * np.eye(3)


def predict_exact(model: ExactModel, query_positions, chunk: int = 1000):
    """Predictive means (N*, 3) and 3x3 covariance blocks (N*, 3, 3)."""
    Q = np.asarray(query_positions, dtype=float).reshape(-1, 3)
    means = np.zeros((len(Q), 3))
    var = np.broadcast_to(prior_block(model.hyp), (len(Q), 3, 3)).copy()
    if len(model.train) == 0:
        return means, var
    for start in range(0, len(Q), chunk):
        q = Q[start:start + chunk]
        Ksf = curlfree_gram(q, model.train.positions, model.hyp)  # (3c, 3N)
        means[start:start + len(q)] = (Ksf @ model.alpha).reshape(-1, 3)
        V = sla.solve_triangular(model.chol, Ksf.T, lower=True, check_finite=False)  # (3N, 3c)
        Vb = V.reshape(V.shape[0], len(q), 3)
        var[start:start + len(q)] -= np.einsum("kia,kib->iab", Vb, Vb)
    return means, var


def nlml_exact(train: TrainingSet, hyp: Hyperparameters, cap: int = DENSE_CAP) -> float:
    """Negative log marginal likelihood of vec(Y^T) under the curl-free prior."""
    n3 = 3 * len(train)
    _check_cap(n3, cap)
    if n3 == 0:
        return 0.0
    L = _factor(_gram(train, hyp), "d2(K_ff) + sigma_y^2 I")
    z = sla.solve_triangular(L, train.targets, lower=True, check_finite=False)
    return float(0.5 * z @ z + np.log(np.diag(L)).sum() + 0.5 * n3 * _LOG_2PI)


def train_hyperparameters(subset: TrainingSet, init: Hyperparameters, max_evals: int = 200,
                          cap: int = DENSE_CAP) -> Hyperparameters:
    """Minimize the NLML by Nelder-Mead over (log l, log sigma_f^2, log sigma_y^2).

    The returned hyperparameters never have a higher NLML than ``init``.
    """
    f0 = nlml_exact(subset, init, cap)
    if not np.isfinite(f0):
        raise NumericalError("NLML is not finite at the initial hyperparameters")

    def objective(theta):
        try:
            value = nlml_exact(subset, Hyperparameters.from_log_vector(theta), cap)
        except (NumericalError, ConfigError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    res = minimize(objective, init.as_log_vector(), method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-6})
    if res.fun < f0:
        best = Hyperparameters.from_log_vector(res.x)
        log.info("NLML %.6g -> %.6g after %d evaluations", f0, res.fun, res.nfev)
        return best
    return init


def predict_sor(train: TrainingSet, grid: InducingGrid, hyp: Hyperparameters, query_positions,
                cap: int = DENSE_CAP):
    """Exact subset-of-regressors prediction with analytic derivative cross-covariances.

    With K_uu = L L^T (Kronecker Cholesky), V = L^{-1} K_uf and the SoR
    training covariance is V^T V.  No interpolation is involved, so the
    gap to D-SKI isolates interpolation error.
    """
    n3 = 3 * len(train)
    _check_cap(n3, cap)
    Q = np.asarray(query_positions, dtype=float).reshape(-1, 3)
    nodes = grid.nodes()
    K = kron_kuu(grid, hyp)
    Ls = [_factor(F, "inducing covariance factor") for F in K.factors]

    def whiten(B):  # L^{-1} B for B of shape (M, k)
        x = B.reshape(K.shape + (-1,))
        for d, L in enumerate(Ls):
            moved = np.moveaxis(x, d, 0)
            sol = sla.solve_triangular(L, moved.reshape(L.shape[0], -1), lower=True, check_finite=False)
            x = np.moveaxis(sol.reshape(moved.shape), 0, d)
        return x.reshape(B.shape)

    Vs = whiten(potential_field_cross(Q, nodes, hyp).T)  # (M, 3N*)
    prior = np.einsum("kia,kib->iab", Vs.reshape(-1, len(Q), 3), Vs.reshape(-1, len(Q), 3))
    if n3 == 0:
        return np.zeros((len(Q), 3)), prior
    Vf = whiten(potential_field_cross(train.positions, nodes, hyp).T)  # (M, 3N)
    A = Vf.T @ Vf
    A[np.diag_indices_from(A)] += hyp.noise_variance
    LA = _factor(A, "SoR training covariance")
    alpha = sla.cho_solve((LA, True), train.targets, check_finite=False)
    cross = Vs.T @ Vf  # (3N*, 3N)
    means = (cross @ alpha).reshape(-1, 3)
    B = sla.solve_triangular(LA, cross.T, lower=True, check_finite=False)  # (3N, 3N*)
    Bb = B.reshape(B.shape[0], len(Q), 3)
    var = prior - np.einsum("kia,kib->iab", Bb, Bb)
    return means, var
