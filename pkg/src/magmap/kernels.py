"""Squared-exponential kernel and the curl-free covariance it induces.

The magnetic field is modelled as the negative gradient of a scalar
potential with a squared-exponential prior.  Covariances between field
measurements are therefore the mixed second derivatives of the scalar
kernel, arranged in 3x3 blocks with measurement-major ordering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

#: Relative diagonal jitter added before factorizing kernel matrices.
JITTER = 1e-8


@dataclass(frozen=True)
class Hyperparameters:
    """Length scale (m), signal variance and noise variance."""

    length_scale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        for name in ("length_scale", "signal_variance", "noise_variance"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def signal_std(self) -> float:
        return float(np.sqrt(self.signal_variance))

    def as_log_vector(self) -> np.ndarray:
        return np.log([self.length_scale, self.signal_variance, self.noise_variance])

    @classmethod
    def from_log_vector(cls, theta) -> "Hyperparameters":
        ell, sf2, sy2 = np.exp(np.asarray(theta, dtype=float))
        return cls(float(ell), float(sf2), float(sy2))


def se_kernel(p, p_prime, hyp: Hyperparameters) -> float:
    """sigma_f^2 * exp(-|p - p'|^2 / (2 l^2)) for two single positions."""
    tau = np.asarray(p, dtype=float) - np.asarray(p_prime, dtype=float)
    return float(hyp.signal_variance * np.exp(-0.5 * np.dot(tau, tau) / hyp.length_scale**2))


def curlfree_block(p, p_prime, hyp: Hyperparameters) -> np.ndarray:
    """3x3 block of mixed partials d^2 k / (dp dp'^T).

    Equal to ``k(p, p') / l^2 * (I - tau tau^T / l^2)`` with ``tau = p - p'``.
    """
    tau = np.asarray(p, dtype=float) - np.asarray(p_prime, dtype=float)
    ell2 = hyp.length_scale**2
    k = se_kernel(p, p_prime, hyp)
    return (k / ell2) * (np.eye(3) - np.outer(tau, tau) / ell2)


def factor_kernel_1d(x, x_prime, D: int, hyp: Hyperparameters):
    """One-dimensional SE factor with signal variance sigma_f^(2/D).

    Works elementwise on arrays; the product of the D factors over the
    coordinates of two points equals :func:`se_kernel`.
    """
    if D < 1:
        raise ConfigError(f"dimension count must be >= 1, got {D}")
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return hyp.signal_variance ** (1.0 / D) * np.exp(-0.5 * d**2 / hyp.length_scale**2)


def se_gram(P, Q, hyp: Hyperparameters) -> np.ndarray:
    """Dense scalar kernel matrix between the rows of P and Q."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    sq = (P**2).sum(1)[:, None] + (Q**2).sum(1)[None, :] - 2.0 * P @ Q.T
    np.maximum(sq, 0.0, out=sq)
    return hyp.signal_variance * np.exp(-0.5 * sq / hyp.length_scale**2)


def curlfree_gram(P, Q, hyp: Hyperparameters, out=None, chunk: int = 512) -> np.ndarray:
    """Dense (3n, 3m) curl-free covariance between position sets P and Q.

    Rows and columns follow vec(Y^T) ordering: (x1, y1, z1, x2, ...).
    The matrix is assembled in row chunks so that only O(chunk * m)
    temporaries are alive; pass ``out`` to fill a preallocated array.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    n, m = len(P), len(Q)
    if out is None:
        out = np.empty((3 * n, 3 * m))
    view = out.reshape(n, 3, m, 3)
    ell2 = hyp.length_scale**2
    eye = np.eye(3)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        tau = P[start:stop, None, :] - Q[None, :, :]  # (c, m, 3)
        k = hyp.signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", tau, tau) / ell2)
        blk = eye[None, None] - tau[..., :, None] * tau[..., None, :] / ell2  # (c, m, 3, 3)
        blk *= (k / ell2)[..., None, None]
        view[start:stop] = blk.transpose(0, 2, 1, 3)
    return out


def potential_field_cross(P, U, hyp: Hyperparameters) -> np.ndarray:
    """Covariance between field measurements at P and potential values at U.

    Returns the (3n, m) matrix cov(-grad phi(p), phi(u)) = k(p, u) (p - u) / l^2.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    U = np.asarray(U, dtype=float).reshape(-1, 3)
    k = se_gram(P, U, hyp)  # (n, m)
    tau = P[:, None, :] - U[None, :, :]  # (n, m, 3)
    cross = (k[..., None] * tau / hyp.length_scale**2).transpose(0, 2, 1)
    return cross.reshape(3 * len(P), len(U))
