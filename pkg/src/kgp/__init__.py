"""Kronecker-structured Gaussian process regression for parametrized
spatio-temporal fields on rectilinear and gappy grids."""

import os as _os

# KGP_THREADS caps internal parallelism (BLAS pools, numba threads).  The
# BLAS variables only take effect if numpy has not been imported yet, so
# this must run before anything below pulls it in.
_threads = _os.environ.get("KGP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from .errors import (
    ConvergenceError,
    DimensionError,
    KgpError,
    NumericalError,
    ValidationError,
)
from .grids import Axis, ProductGrid
from .kronalg import (
    EigFactors,
    KronOperator,
    eig_factors,
    inverse_apply,
    kron_diag,
    kron_matvec,
    logdet_from_eigs,
    row_sq_project,
)
from .kernels import (
    BaseKernel,
    FactorKernel,
    FeatureMap,
    ProductKernelSpec,
    cross_covariance,
    default_spec_for_grid,
    feature_forward,
    gram,
    identity_map,
    init_feature_map,
    product_covariance,
)
from .dense_gp import DenseGP, dense_nlml, dense_nlml_grad_fd, dense_predict
from .grid_gp import FittedModel, fit, grid_nlml, predict_mean, predict_var
from .gappy_gp import (
    GappyMask,
    GappyModel,
    PseudoValueSolution,
    fit_gappy,
    gappy_nlml,
    gappy_predict_mean,
    gappy_predict_var_bounds,
    lift_mask,
    solve_pseudovalues,
)
from .training import (
    AdamState,
    GappyProblem,
    GridProblem,
    TrainConfig,
    TrainTrace,
    adam_step,
    grad_fd,
    pack_params,
    train,
    unpack_params,
)
from .datagen import (
    AnalyticMap,
    BurgersConfig,
    ScatteredSnapshot,
    apply_map,
    burgers_dataset,
    burgers_solve,
    embed_to_lattice,
    pca_reduce,
    relative_error,
    sobol_parameters,
)

__version__ = "0.1.0"
