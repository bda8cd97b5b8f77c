"""Matrix-free linear algebra on Kronecker-structured and interpolated operators."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, NumericalError
from .grid import InducingGrid, KroneckerKernel, SparseInterpolation, stencil_quadratic_forms

log = logging.getLogger(__name__)


def kron_mvm(K: KroneckerKernel, v: np.ndarray) -> np.ndarray:
    """(K1 kron K2 kron ... ) @ v by one reshape-multiply pass per factor.

    ``v`` may be a vector or an (M_ind, k) block of vectors.
    """
    v = np.asarray(v, dtype=float)
    shape = K.shape
    if v.shape[0] != K.size:
        raise ConfigError(f"vector length {v.shape[0]} does not match Kronecker size {K.size}")
    extra = v.shape[1:]
    x = v.reshape(shape + extra)
    for d, F in enumerate(K.factors):
        x = np.moveaxis(np.tensordot(F, x, axes=([1], [d])), 0, d)
    return x.reshape(v.shape)


@dataclass(frozen=True)
class AOperator:
    """A = dW K_uu dW^T + sigma_y^2 I, applied without forming any dense matrix."""

    dW: SparseInterpolation
    K: KroneckerKernel
    noise_variance: float

    @property
    def n(self) -> int:
        return self.dW.shape[0]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return apply_A(self, v)

    def diagonal(self, grid: InducingGrid) -> np.ndarray:
        """Exact diag(A) from each measurement's stencil, O(n 4^D)."""
        blocks = stencil_quadratic_forms(self.K, grid, self.dW)
        return np.diagonal(blocks, axis1=1, axis2=2).reshape(-1) + self.noise_variance


def apply_A(op: AOperator, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != op.n:
        raise ConfigError(f"vector length {v.shape[0]} does not match operator size {op.n}")
    return op.dW.matvec(kron_mvm(op.K, op.dW.rmatvec(v))) + op.noise_variance * v


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residuals: np.ndarray
    converged: bool


def pcg(apply: Callable[[np.ndarray], np.ndarray], b: np.ndarray, tol: float = 1e-4,
        max_iters: int = 1000, preconditioner: Optional[Callable] = None) -> CGResult:
    """Preconditioned conjugate gradients for an SPD operator.

    Stops once ``||b - A x|| <= tol ||b||`` (recursively updated residual).
    ``preconditioner`` applies an approximation of A^{-1}.  The returned
    ``residuals`` holds relative residual norms, one per iterate including
    the initial guess.  Hitting ``max_iters`` sets ``converged=False``
    rather than raising.
    """
    b = np.asarray(b, dtype=float)
    if tol <= 0:
        raise ConfigError("CG tolerance must be positive")
    if not np.all(np.isfinite(b)):
        raise NumericalError("right-hand side contains non-finite values")
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return CGResult(x, 0, np.zeros(1), True)
    M = preconditioner if preconditioner is not None else (lambda r: r)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = r @ z
    history = [1.0]
    for it in range(1, max_iters + 1):
        Ap = apply(p)
        curv = p @ Ap
        if not np.isfinite(curv):
            raise NumericalError(f"non-finite curvature at CG iteration {it}")
        if curv <= 0.0:
            raise NumericalError(f"CG breakdown: non-positive curvature {curv:.3e} at iteration {it}")
        step = rz / curv
        x += step * p
        r -= step * Ap
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if not np.isfinite(rel):
            raise NumericalError(f"non-finite residual at CG iteration {it}")
        if rel <= tol:
            return CGResult(x, it, np.array(history), True)
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    log.warning("CG stopped after %d iterations at relative residual %.3e", max_iters, history[-1])
    return CGResult(x, max_iters, np.array(history), False)


def jacobi(diagonal: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    inv = 1.0 / np.asarray(diagonal, dtype=float)
    return lambda r: inv * r


@dataclass(frozen=True)
class LanczosFactors:
    """Orthonormal basis Q (n, T) and tridiagonal T given by its two diagonals."""

    Q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    breakdown: bool = False

    @property
    def rank(self) -> int:
        return len(self.alpha)

    def tridiagonal(self) -> np.ndarray:
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)

    @cached_property
    def ritz_values(self) -> np.ndarray:
        return sla.eigh_tridiagonal(self.alpha, self.beta, eigvals_only=True)


def lanczos(apply: Callable[[np.ndarray], np.ndarray], start: np.ndarray, T: int,
            breakdown_tol: float = 1e-12) -> LanczosFactors:
    """Lanczos tridiagonalization with full reorthogonalization.

    Each new direction is orthogonalized twice against every stored
    column (classical Gram-Schmidt, repeated), which keeps ``Q^T Q`` at
    the identity to working precision.  If an invariant subspace is hit
    before T steps, the factors of the achieved rank are returned with
    ``breakdown=True``.
    """
    start = np.asarray(start, dtype=float)
    n = start.shape[0]
    if T < 1 or T > n:
        raise ConfigError(f"Lanczos iteration count must lie in [1, {n}], got {T}")
    nrm = np.linalg.norm(start)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise ConfigError("Lanczos start vector must be nonzero and finite")
    Q = np.empty((n, T))
    alpha = np.empty(T)
    beta = np.empty(max(T - 1, 0))
    Q[:, 0] = start / nrm
    scale = 0.0
    for j in range(T):
        w = apply(Q[:, j])
        alpha[j] = Q[:, j] @ w
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        if j == T - 1:
            break
        b = np.linalg.norm(w)
        scale = max(scale, abs(alpha[j]), b)
        if b <= breakdown_tol * scale:
            log.info("Lanczos found an invariant subspace after %d steps", j + 1)
            return LanczosFactors(Q[:, : j + 1].copy(), alpha[: j + 1].copy(), beta[:j].copy(), True)
        beta[j] = b
        Q[:, j + 1] = w / b
    return LanczosFactors(Q, alpha, beta, False)


def tridiag_solve(alpha: np.ndarray, beta: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve T x = rhs for SPD tridiagonal T via banded Cholesky, O(T) per column."""
    ab = tridiag_cholesky(alpha, beta)
    return sla.cho_solve_banded((ab, True), np.asarray(rhs, dtype=float), check_finite=False)


def tridiag_cholesky(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Lower banded Cholesky factor of the tridiagonal (alpha, beta)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    ab = np.zeros((2, len(alpha)))
    ab[0] = alpha
    ab[1, :-1] = beta
    try:
        return sla.cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "tridiagonal matrix is singular or indefinite; increase jitter or reduce "
            "the Lanczos iteration count") from exc
