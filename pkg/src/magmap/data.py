"""Datasets, synthetic sampling, metrics, compute budgets and text file formats."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import CapacityError, ConfigError, DataError, NumericalError
from .grid import InducingGrid, build_dW, kron_kuu
from .kernels import JITTER, Hyperparameters, curlfree_gram

#: Default cap on 3N for dense prior sampling (N = 6000 synthetic protocol).
SAMPLER_CAP = 18000

#: Paper protocol defaults: [length scale, signal variance, noise variance].
SIMULATION_HYP = Hyperparameters(2.0, 1.0, 0.01)
SIMULATION_Z = 0.01

MEASUREMENT_HEADER = "x,y,z,Bx,By,Bz"
MAP_HEADER = "x,y,z,mean_x,mean_y,mean_z,var_x,var_y,var_z,magnitude"


@dataclass(frozen=True)
class TrainingSet:
    """Positions (N, 3) and field measurements (N, 3).

    ``component_means`` records what preprocessing subtracted; ``clean``
    optionally holds noise-free field values for synthetic data.
    """

    positions: np.ndarray
    measurements: np.ndarray
    component_means: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clean: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        Y = np.asarray(self.measurements, dtype=float).reshape(-1, 3)
        if len(pos) != len(Y):
            raise DataError(f"{len(pos)} positions but {len(Y)} measurements")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "measurements", Y)
        object.__setattr__(self, "component_means", np.asarray(self.component_means, dtype=float))
        if self.clean is not None:
            object.__setattr__(self, "clean", np.asarray(self.clean, dtype=float).reshape(-1, 3))

    def __len__(self):
        return len(self.positions)

    @property
    def targets(self) -> np.ndarray:
        """vec(Y^T): (y1x, y1y, y1z, y2x, ...)."""
        return self.measurements.reshape(-1)

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=np.int64)
        clean = None if self.clean is None else self.clean[idx]
        return TrainingSet(self.positions[idx], self.measurements[idx], self.component_means, clean)

    def bounds(self) -> np.ndarray:
        return np.stack([self.positions.min(0), self.positions.max(0)], axis=1)


def preprocess(train: TrainingSet) -> TrainingSet:
    """Subtract per-component means, accumulating them in ``component_means``."""
    if len(train) == 0:
        return train
    mu = train.measurements.mean(0)
    clean = None if train.clean is None else train.clean - mu
    return TrainingSet(train.positions, train.measurements - mu, train.component_means + mu, clean)


def _rng(seed):
    return np.random.default_rng(seed)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def sample_curlfree_prior(positions, hyp: Hyperparameters, seed=None, cap: int = SAMPLER_CAP,
                          return_clean: bool = False):
    """Draw measurements Y (N, 3) with vec(Y^T) ~ N(0, d2(K_ff) + sigma_y^2 I).

    The noise-free part is drawn through a dense Cholesky factor of the
    curl-free covariance, then i.i.d. noise is added; the sum has the
    stated distribution.  With ``return_clean`` the noise-free values are
    returned as well.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n3 = 3 * len(positions)
    if n3 > cap:
        raise CapacityError(f"dense sampling of 3N = {n3} exceeds the cap of {cap}")
    rng = _rng(seed)
    z = rng.standard_normal(n3)
    noise = np.sqrt(hyp.noise_variance) * rng.standard_normal(n3)
    if n3 == 0:
        clean = np.zeros(0)
    else:
        K = curlfree_gram(positions, positions, hyp)
        K[np.diag_indices_from(K)] += JITTER * hyp.signal_variance
        # K is symmetric, so its transpose is a Fortran-ordered alias that LAPACK can factor in place.
        try:
            L = sla.cholesky(K.T, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("prior covariance is not positive definite; increase jitter") from exc
        clean = L @ z
        del K, L
    Y = (clean + noise).reshape(-1, 3)
    return (Y, clean.reshape(-1, 3)) if return_clean else Y


def sample_grid_prior(grid: InducingGrid, positions, hyp: Hyperparameters, seed=None,
                      return_clean: bool = False):
    """Scalable synthetic sampler: draw grid potentials u ~ N(0, K_uu), Y = dW u + noise.

    Samples the interpolated prior exactly in O(M_ind sum_d M_d + 64 N),
    which is what large synthetic sets (tens of thousands of points) need.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    rng = _rng(seed)
    K = kron_kuu(grid, hyp)
    Ls = []
    for F in K.factors:
        try:
            Ls.append(np.linalg.cholesky(F))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("grid covariance factor is not positive definite") from exc
    x = rng.standard_normal(grid.counts)
    for d, L in enumerate(Ls):
        x = np.moveaxis(np.tensordot(L, x, axes=([1], [d])), 0, d)
    clean = build_dW(grid, positions).matvec(x.reshape(-1))
    Y = clean + np.sqrt(hyp.noise_variance) * rng.standard_normal(clean.shape)
    return (Y.reshape(-1, 3), clean.reshape(-1, 3)) if return_clean else Y.reshape(-1, 3)


def simulation_positions(area_half_width: float, n_points: int, seed=None, z: float = SIMULATION_Z):
    """Uniform positions in [-a, a]^2 on the fixed plane z."""
    if area_half_width <= 0:
        raise ConfigError("area_half_width must be positive")
    if n_points < 0:
        raise ConfigError("n_points must be non-negative")
    rng = _rng(seed)
    xy = rng.uniform(-area_half_width, area_half_width, size=(n_points, 2))
    return np.column_stack([xy, np.full(n_points, z)])


def make_simulation_dataset(area_half_width: float = 20.0, n_points: int = 6000,
                            hyp: Hyperparameters = SIMULATION_HYP, seed=None,
                            subarea_half_width: Optional[float] = None,
                            cap: int = SAMPLER_CAP) -> TrainingSet:
    """Synthetic curl-free field data in a square box.

    Positions are drawn in ``[-a, a]^2 x {0.01}``.  With
    ``subarea_half_width`` only the points inside the inner square are
    kept before the field is sampled, which matches cutting a smaller area
    out of the full data set.  The noise-free field is kept in ``clean``.
    """
    pos_seed, field_seed = as_seed_sequence(seed).spawn(2)
    pos = simulation_positions(area_half_width, n_points, pos_seed)
    if subarea_half_width is not None:
        inside = np.all(np.abs(pos[:, :2]) <= subarea_half_width, axis=1)
        pos = pos[inside]
    Y, clean = sample_curlfree_prior(pos, hyp, field_seed, cap=cap, return_clean=True)
    return TrainingSet(pos, Y, clean=clean)


def split_train_test(data: TrainingSet, train_fraction: float = 0.8, seed=None):
    """Seeded shuffle split into disjoint, exhaustive (train, test) sets."""
    if len(data) == 0:
        raise DataError("cannot split an empty data set")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    perm = _rng(seed).permutation(len(data))
    k = int(round(train_fraction * len(data)))
    return data.subset(perm[:k]), data.subset(perm[k:])


def downsample_baseline(data: TrainingSet, n_dwn: int, seed=None) -> TrainingSet:
    """Uniform random subset of ``n_dwn`` points without replacement."""
    if n_dwn < 0 or n_dwn > len(data):
        raise ConfigError(f"cannot draw {n_dwn} points from a set of {len(data)}")
    idx = _rng(seed).choice(len(data), size=n_dwn, replace=False)
    return data.subset(np.sort(idx))


def rmse(predicted, truth) -> float:
    """Root mean square error over all scalar entries."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise DataError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((predicted - truth) ** 2)))


@dataclass(frozen=True)
class BudgetReport:
    operations: float
    n_dwn: int
    m_bf: int


def budget_match(n_train: int, grid: InducingGrid, J: int) -> BudgetReport:
    """Equal-cost sizes for the downsampled GP and a basis-function GP.

    O_ind = J (3N + M_ind sum_d M_d); N_dwn = O_ind^(1/3); M_bf = sqrt(O_ind / 3N).
    """
    if J < 1:
        raise ConfigError("J must be at least 1")
    ops = float(J) * (3 * n_train + grid.size * sum(grid.counts))
    n_dwn = int(round(ops ** (1.0 / 3.0)))
    # Correct floating error in the cube root: round(x) = n iff (n - 1/2)^3 <= ops < (n + 1/2)^3.
    while n_dwn > 0 and (n_dwn - 0.5) ** 3 > ops:
        n_dwn -= 1
    while (n_dwn + 0.5) ** 3 <= ops:
        n_dwn += 1
    m_bf = int(round(math.sqrt(ops / (3 * n_train)))) if n_train > 0 else 0
    return BudgetReport(ops, n_dwn, m_bf)


# -- text formats ----------------------------------------------------------


def _parse_rows(path: Path, ncols: int):
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{path}: empty file")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != ncols:
                raise DataError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols)


def load_measurements(path, subtract_mean: bool = True) -> TrainingSet:
    """Read ``x,y,z,Bx,By,Bz`` CSV and subtract per-component means."""
    arr = _parse_rows(Path(path), 6)
    data = TrainingSet(arr[:, :3], arr[:, 3:])
    return preprocess(data) if subtract_mean else data


def save_measurements(data: TrainingSet, path, restore_mean: bool = True):
    Y = data.measurements + (data.component_means if restore_mean else 0.0)
    arr = np.column_stack([data.positions, Y])
    _write_rows(Path(path), MEASUREMENT_HEADER, arr)


def _write_rows(path: Path, header: str, arr: np.ndarray):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class MapTable:
    """Predictions on a regular lattice, rows in C order over (x, y, z) axes."""

    axes: tuple
    mean: np.ndarray
    variance: np.ndarray

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def positions(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.mean, axis=1)


def save_map(table: MapTable, path):
    arr = np.column_stack([table.positions, table.mean, table.variance, table.magnitude])
    _write_rows(Path(path), MAP_HEADER, arr)


def load_map(path) -> MapTable:
    """Read a map table, recovering the lattice axes from the coordinates."""
    arr = _parse_rows(Path(path), 10)
    axes = tuple(np.unique(arr[:, d]) for d in range(3))
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(arr):
        raise DataError(f"{path}: {len(arr)} rows do not form a lattice of shape {shape}")
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    if not np.array_equal(mesh, arr[:, :3]):
        raise DataError(f"{path}: rows are not in lattice order")
    return MapTable(axes, arr[:, 3:6], arr[:, 6:9])
