"""Curl-free magnetic field maps with derivative structured kernel interpolation (D-SKI)."""
from .data import (MapTable, TrainingSet, budget_match, load_measurements, make_simulation_dataset,
                   rmse, sample_curlfree_prior, save_map)
from .dski import FittedMap, fit_dski, load_fitted_map, predict_grid, predict_mean, predict_variance
from .errors import CapacityError, ConfigError, DataError, DomainError, MagmapError, NumericalError
from .exact_gp import fit_exact, predict_exact, predict_sor
from .grid import InducingGrid, build_dW, build_grid, build_W, kron_kuu
from .kernels import Hyperparameters, curlfree_block, se_kernel

__version__ = "0.1.0"
