"""Inducing grids, Kronecker-factored inducing covariance and cubic interpolation.

Grid nodes are flattened in C order, node ``(i1, i2, i3)`` having index
``(i1 * M2 + i2) * M3 + i3``; this matches ``np.kron(K1, np.kron(K2, K3))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError
from .kernels import JITTER, Hyperparameters, factor_kernel_1d

#: Keys cubic-convolution parameter.
KEYS_A = -0.5
_OFFSETS = np.array([-1, 0, 1, 2])
BOUNDARY_MODES = ("interior", "keys")
# Rounding slack, in cells, for points sitting exactly on the interior edge.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class InducingGrid:
    """Equispaced Cartesian grid given by per-dimension bounds and node counts.

    ``boundary`` selects how stencils are formed near the grid edges:
    ``"interior"`` accepts only points whose 4-node stencil lies inside the
    grid, ``"keys"`` applies the Keys boundary closure (virtual node
    ``c[-1] = 3 c[0] - 3 c[1] + c[2]``) so the whole grid box is usable.
    """

    lower: tuple
    upper: tuple
    counts: tuple
    boundary: str = "interior"

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise ConfigError("lower, upper and counts must have equal length")
        if self.boundary not in BOUNDARY_MODES:
            raise ConfigError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")
        for d, (lo, hi, m) in enumerate(zip(self.lower, self.upper, self.counts)):
            if m < 1:
                raise ConfigError(f"grid count in dimension {d} must be positive, got {m}")
            if m > 1 and not hi > lo:
                raise ConfigError(f"grid bounds in dimension {d} are degenerate: [{lo}, {hi}]")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (m - 1) if m > 1 else 1.0
                     for lo, hi, m in zip(self.lower, self.upper, self.counts))

    def axis(self, d: int) -> np.ndarray:
        return np.linspace(self.lower[d], self.upper[d], self.counts[d])

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (M_ind, D) array in flattened order."""
        mesh = np.meshgrid(*[self.axis(d) for d in range(self.ndim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior(self, d: int) -> tuple:
        """Closed interval of coordinates that can be interpolated in dimension d."""
        if self.boundary == "keys":
            return self.lower[d], self.upper[d]
        h = self.spacing[d]
        return self.lower[d] + h, self.upper[d] - h

    def to_dict(self) -> dict:
        return {"lower": list(map(float, self.lower)),
                "upper": list(map(float, self.upper)),
                "counts": list(map(int, self.counts)),
                "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "InducingGrid":
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["counts"]),
                   d.get("boundary", "interior"))


def build_grid(data_bounds, counts, padding=2, boundary: str = "interior") -> InducingGrid:
    """Grid covering ``data_bounds`` widened by ``padding`` whole cells per side.

    ``padding`` may be an int or one value per dimension.  The spacing in
    dimension d is ``(hi - lo) / (M_d - 1 - 2 * padding_d)``.  With the
    default interior stencils a padding of at least one cell is needed for
    points on the data bounds to be interpolable.
    """
    bounds = np.asarray(data_bounds, dtype=float).reshape(-1, 2)
    counts = tuple(int(m) for m in counts)
    if len(counts) != len(bounds):
        raise ConfigError(f"got {len(bounds)} bound pairs but {len(counts)} counts")
    pads = (padding,) * len(counts) if np.isscalar(padding) else tuple(padding)
    if len(pads) != len(counts):
        raise ConfigError("padding must be a scalar or have one entry per dimension")
    lower, upper = [], []
    for d, ((lo, hi), m, pad) in enumerate(zip(bounds, counts, pads)):
        if m < 4:
            raise ConfigError(f"grid count in dimension {d} must be >= 4 for cubic stencils, got {m}")
        if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
            raise ConfigError(f"data bounds in dimension {d} are degenerate: [{lo}, {hi}]")
        if pad < 0:
            raise ConfigError(f"padding in dimension {d} must be >= 0")
        cells = m - 1 - 2 * int(pad)
        if cells < 1:
            raise ConfigError(
                f"{m} nodes in dimension {d} cannot hold {pad} padding cells per side")
        h = (hi - lo) / cells
        lower.append(float(lo - pad * h))
        upper.append(float(lower[-1] + (m - 1) * h))
    return InducingGrid(tuple(lower), tuple(upper), counts, boundary)


@dataclass(frozen=True)
class KroneckerKernel:
    """Inducing covariance held as per-dimension factor matrices."""

    factors: tuple

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def dense(self) -> np.ndarray:
        out = np.ones((1, 1))
        for f in self.factors:
            out = np.kron(out, f)
        return out

    def diagonal(self) -> np.ndarray:
        out = np.ones(1)
        for f in self.factors:
            out = np.kron(out, np.diag(f))
        return out


def kron_kuu(grid: InducingGrid, hyp: Hyperparameters, jitter: float = JITTER) -> KroneckerKernel:
    """Factor d is the 1-D SE kernel on axis d with signal variance sigma_f^(2/D)."""
    D = grid.ndim
    factors = []
    for d in range(D):
        x = grid.axis(d)
        K = factor_kernel_1d(x[:, None], x[None, :], D, hyp)
        K[np.diag_indices_from(K)] += jitter * hyp.signal_variance ** (1.0 / D)
        factors.append(K)
    return KroneckerKernel(tuple(factors))


def _keys(x, a=KEYS_A):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2) * ax3 - (a + 3) * ax2 + 1
    outer = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, inner, np.where(ax < 2, outer, 0.0))


def _keys_deriv(x, a=KEYS_A):
    ax = np.abs(x)
    sgn = np.sign(x)
    inner = 3 * (a + 2) * ax * ax - 2 * (a + 3) * ax
    outer = 3 * a * ax * ax - 10 * a * ax + 8 * a
    return sgn * np.where(ax <= 1, inner, np.where(ax < 2, outer, 0.0))


def _weights(s):
    """Interpolation weights and their s-derivatives for stencil offsets -1..2."""
    s = np.asarray(s, dtype=float)[..., None]
    dist = s - _OFFSETS
    return _keys(dist), _keys_deriv(dist)


def cubic_weights_1d(s: float, spacing: float = 1.0):
    """Keys cubic-convolution weights at normalized offset ``s`` in [0, 1).

    Returns ``(weights, derivative_weights)``, each of length 4 for the
    stencil nodes at offsets -1, 0, 1, 2.  Derivative weights are per unit
    of physical length, i.e. divided by ``spacing``.
    """
    if not (0.0 <= s < 1.0):
        raise ConfigError(f"normalized offset must lie in [0, 1), got {s!r}")
    w, dw = _weights(s)
    return w, dw / spacing


def _axis_weights(grid: InducingGrid, d: int, x: np.ndarray, positions: np.ndarray):
    """First stencil node, weights and s-derivative weights along one axis.

    Validates the domain.  Returns ``first`` (n,) and two (n, 4) arrays for
    nodes ``first .. first + 3``.
    """
    m = grid.counts[d]
    t = (x - grid.lower[d]) / grid.spacing[d]
    lo_t, hi_t = (0.0, m - 1.0) if grid.boundary == "keys" else (1.0, m - 2.0)
    bad = ~np.isfinite(t) | (t < lo_t - _EDGE_TOL) | (t > hi_t + _EDGE_TOL)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        lo, hi = grid.interior(d)
        raise DomainError(
            f"point {i} {positions[i].tolist()} is outside the interpolable region "
            f"[{lo:.6g}, {hi:.6g}] in dimension {d}")
    t = np.clip(t, lo_t, hi_t)
    k = np.minimum(np.floor(t).astype(np.int64), int(hi_t) - 1)
    w, dw = _weights(t - k)
    first = k - 1
    if grid.boundary == "keys":
        for arr in (w, dw):
            _fold_keys_boundary(arr, k == 0, k == m - 2)
        first = np.clip(first, 0, m - 4)
    return first, w, dw


def _fold_keys_boundary(arr: np.ndarray, left: np.ndarray, right: np.ndarray):
    """Fold virtual-node weights into real nodes, shifting stencils inside the grid.

    Left edge: c[-1] = 3 c[0] - 3 c[1] + c[2], stencil becomes nodes 0..3.
    Right edge: c[M] = 3 c[M-1] - 3 c[M-2] + c[M-3], stencil becomes M-4..M-1.
    """
    if left.any():
        v = arr[left, 0]
        arr[left] = np.column_stack([arr[left, 1] + 3 * v, arr[left, 2] - 3 * v,
                                     arr[left, 3] + v, np.zeros_like(v)])
    if right.any():
        v = arr[right, 3]
        arr[right] = np.column_stack([np.zeros_like(v), arr[right, 0] + v,
                                      arr[right, 1] - 3 * v, arr[right, 2] + 3 * v])


def _locate(grid: InducingGrid, positions: np.ndarray):
    n, D = positions.shape
    if D != grid.ndim:
        raise DomainError(f"positions have {D} coordinates but the grid has {grid.ndim} dimensions")
    first = np.empty((n, D), dtype=np.int64)
    vals, ders = [], []
    for d in range(D):
        first[:, d], w, dw = _axis_weights(grid, d, positions[:, d], positions)
        vals.append(w)
        ders.append(dw / grid.spacing[d])
    return first, vals, ders


def _stencil_indices(grid: InducingGrid, first: np.ndarray) -> np.ndarray:
    """Flattened node indices of each point's 4^D stencil, shape (n, 4^D)."""
    n, D = first.shape
    idx = np.zeros((n,) + (1,) * D, dtype=np.int64)
    for d in range(D):
        stride = int(np.prod(grid.counts[d + 1:]))
        shape = [1] * D
        shape[d] = 4
        local = (first[:, d, None] + np.arange(4)).reshape((n,) + tuple(shape))
        idx = idx + local * stride
    return idx.reshape(n, -1)


def _tensor(factors: list) -> np.ndarray:
    """Row-wise outer product of per-dimension (n, 4) weights, flattened to (n, 4^D)."""
    n, D = factors[0].shape[0], len(factors)
    w = np.ones((n,) + (1,) * D)
    for d, f in enumerate(factors):
        shape = [1] * D
        shape[d] = 4
        w = w * f.reshape((n,) + tuple(shape))
    return w.reshape(n, -1)


@dataclass(frozen=True)
class SparseInterpolation:
    """Row-sparse interpolation matrix: 4^D stencil entries per point.

    ``indices`` has shape (n, 4^D); ``weights`` has shape (n, 4^D) for plain
    interpolation, or (n, D, 4^D) for the derivative form, where row
    ``(i, d)`` holds the weights of the d-th negative partial derivative.
    """

    indices: np.ndarray
    weights: np.ndarray
    n_nodes: int

    @property
    def n_points(self) -> int:
        return self.indices.shape[0]

    @property
    def rows_per_point(self) -> int:
        return 1 if self.weights.ndim == 2 else self.weights.shape[1]

    @property
    def shape(self) -> tuple:
        return (self.n_points * self.rows_per_point, self.n_nodes)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """CSR matrix with measurement-major, component-minor row order."""
        n, nnz = self.indices.shape
        r = self.rows_per_point
        cols = np.repeat(self.indices[:, None, :], r, axis=1).reshape(-1)
        data = self.weights.reshape(-1)
        indptr = np.arange(0, n * r * nnz + 1, nnz, dtype=np.int64)
        return sp.csr_matrix((data, cols, indptr), shape=self.shape)

    @cached_property
    def matrix_t(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """Apply to node values: returns the interpolated rows."""
        return self.matrix @ u

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix_t @ v

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


# Spec-facing alias: the derivative form of the container.
SparseDerivativeInterpolation = SparseInterpolation


def build_W(grid: InducingGrid, positions) -> SparseInterpolation:
    """Tensor-product cubic interpolation weights, one row per position."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    first, vals, _ = _locate(grid, positions)
    return SparseInterpolation(_stencil_indices(grid, first), _tensor(vals), grid.size)


def build_dW(grid: InducingGrid, positions) -> SparseInterpolation:
    """Negative-gradient interpolation weights, D rows per position.

    Row ``(i, d)`` holds ``-d/dx_d`` of the tensor-product interpolant
    weights at position i, so applying the matrix to node values of a
    scalar potential yields the field ``-grad phi``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    first, vals, ders = _locate(grid, positions)
    D = positions.shape[1]
    rows = [-_tensor([ders[d] if d == comp else vals[d] for d in range(D)]) for comp in range(D)]
    return SparseInterpolation(_stencil_indices(grid, first), np.stack(rows, axis=1), grid.size)


def stencil_quadratic_forms(K: KroneckerKernel, grid: InducingGrid, interp: SparseInterpolation,
                            chunk: int = 4096) -> np.ndarray:
    """Per-point blocks ``w_i K_uu w_i^T`` restricted to each 4^D stencil.

    For derivative interpolation returns shape (n, D, D); for plain
    interpolation shape (n,).  Only the 4x4 sub-blocks of the Kronecker
    factors touched by each stencil are used, so the cost is O(n 4^D).
    """
    D = len(K.factors)
    n = interp.n_points
    r = interp.rows_per_point
    W = interp.weights.reshape(n, r, *([4] * D))
    first = _stencil_origin(grid, interp.indices)
    out = np.empty((n, r, r))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        KW = W[start:stop]
        for d in range(D):
            loc = first[start:stop, d, None] + np.arange(4)  # (c, 4)
            sub = K.factors[d][loc[:, :, None], loc[:, None, :]]  # (c, 4, 4)
            KW = np.moveaxis(np.einsum("cab,crb...->cra...", sub, np.moveaxis(KW, 2 + d, 2)), 2, 2 + d)
        flatW = W[start:stop].reshape(stop - start, r, -1)
        out[start:stop] = np.einsum("cik,cjk->cij", flatW, KW.reshape(stop - start, r, -1))
    return out[:, 0, 0] if interp.weights.ndim == 2 else out


def _stencil_origin(grid: InducingGrid, indices: np.ndarray) -> np.ndarray:
    """Per-dimension index of the lowest stencil node."""
    first = indices[:, 0]
    return np.stack(np.unravel_index(first, grid.counts), axis=1)
