"""GP inference on gappy lattices: full rectilinear background grids where
some spatial points carry no observation.

The trick: augment the observed (regular) values with pseudovalues at the
gaps chosen so that solving the full Kronecker-structured system
(K + sigma2 I) alpha = [y_r; y_g] reproduces the regular-points-only solve
exactly -- the solution has alpha identically zero at the gaps, and its
restriction to the regular points equals (K_r + sigma2 I)^-1 y_r.  The
pseudovalues solve an SPD system in the gap block of the inverse, handled
by conjugate gradients where every operator application is a
gather -> eigenbasis solve -> scatter.

The restricted covariance has no Kronecker structure, so its log
determinant is approximated: the largest n_regular eigenvalues of the full
structured matrix, scaled by the regular fraction, stand in for the
restricted spectrum (justified by Cauchy interlacing).  Posterior variance
at regular points is bracketed instead of computed: the full-lattice
variance from below, a Rayleigh-quotient bound through the regular
selection from above.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._hooks import perturb_pseudovalues
from .errors import ConvergenceError, NumericalError, ValidationError
from .grid_gp import LOG_2PI, FittedModel, fit, predict_mean, predict_var
from .kernels import cross_covariance, prior_variance, product_covariance
from .kronalg import eig_factors, inverse_apply, kron_matvec, row_sq_project

DEFAULT_CG_TOL = 1e-5
DEFAULT_CG_MAXITER = 2000


@dataclass(frozen=True, init=False)
class GappyMask:
    """Partition of a spatial lattice into regular (observed) and gap points.

    Indices are flat C-order positions on the spatial lattice only; lifting
    to the full (parameter, space, time) training vector is index
    arithmetic, never a materialized selection matrix.
    """

    spatial_shape: tuple
    regular_idx: np.ndarray
    gap_idx: np.ndarray

    def __init__(self, spatial_shape, regular_idx, gap_idx):
        spatial_shape = tuple(int(s) for s in spatial_shape)
        m = int(np.prod(spatial_shape))
        reg = np.asarray(regular_idx, dtype=np.intp).ravel()
        gap = np.asarray(gap_idx, dtype=np.intp).ravel()
        reg = np.sort(reg)
        gap = np.sort(gap)
        if reg.size == 0:
            raise ValidationError("mask needs at least one regular point")
        combined = np.concatenate([reg, gap])
        if (combined.size != m or np.unique(combined).size != m
                or combined.min() < 0 or combined.max() >= m):
            raise ValidationError(
                "regular and gap index sets must disjointly cover the lattice"
            )
        object.__setattr__(self, "spatial_shape", spatial_shape)
        object.__setattr__(self, "regular_idx", reg)
        object.__setattr__(self, "gap_idx", gap)

    @classmethod
    def from_bool_field(cls, regular):
        """True marks a regular (observed) lattice point."""
        regular = np.asarray(regular, dtype=bool)
        flat = regular.ravel()
        return cls(regular.shape, np.flatnonzero(flat), np.flatnonzero(~flat))

    @classmethod
    def all_regular(cls, spatial_shape):
        m = int(np.prod(spatial_shape))
        return cls(spatial_shape, np.arange(m), np.empty(0, dtype=np.intp))

    @property
    def n_regular(self):
        return int(self.regular_idx.size)

    @property
    def n_gap(self):
        return int(self.gap_idx.size)

    @property
    def m(self):
        return int(np.prod(self.spatial_shape))

    def regular_field(self):
        """0/1 spatial field, 1 at regular points."""
        f = np.zeros(self.m)
        f[self.regular_idx] = 1.0
        return f.reshape(self.spatial_shape)


def lift_mask(mask, n_param, n_time):
    """Lift spatial index sets to the full training vector.

    A spatial point s expands to the flat positions (p*M + s)*Nt + t for
    every parameter index p and time index t, consistent with C-order
    raveling of (parameter, space, time) field tensors.  Gather then
    scatter over these indices is the identity on the selected entries.
    """
    def expand(spatial_idx):
        p = np.arange(n_param)[:, None, None]
        t = np.arange(n_time)[None, None, :]
        s = np.asarray(spatial_idx)[None, :, None]
        return ((p * mask.m + s) * n_time + t).ravel()

    return expand(mask.regular_idx), expand(mask.gap_idx)


class PseudoValueSolution(NamedTuple):
    """Gap pseudovalues plus the CG diagnostics that produced them."""

    y_g: np.ndarray
    cg_iterations: int
    residual: float


class GappyNlmlResult(NamedTuple):
    """Gappy NLML value with its approximation metadata.

    ``logdet`` carries the scaled-spectrum approximation whenever there are
    gaps (``logdet_is_approx``); the quadratic term is exact.
    """

    value: float
    quad: float
    logdet: float
    logdet_is_approx: bool
    cg_iterations: int
    pseudo: PseudoValueSolution


def conjugate_gradient(matvec, b, x0=None, tol=DEFAULT_CG_TOL, maxiter=DEFAULT_CG_MAXITER):
    """Plain CG on an SPD operator, relative-residual stopping rule.

    Returns (x, iterations, relative residual).  Raises ConvergenceError
    carrying the best residual if the budget runs out; the caller may relax
    the tolerance and retry.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    best = np.sqrt(rs) / bnorm
    if best <= tol:
        return x, 0, best
    for k in range(1, maxiter + 1):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0:
            raise NumericalError(
                f"CG operator not positive definite (p^T A p = {denom:.3e})"
            )
        a = rs / denom
        x += a * p
        r -= a * ap
        rs_new = float(r @ r)
        rel = np.sqrt(rs_new) / bnorm
        best = min(best, rel)
        if rel <= tol:
            return x, k, rel
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError(
        f"CG did not reach {tol:.1e} in {maxiter} iterations "
        f"(best residual {best:.3e})",
        residual=best,
        iterations=maxiter,
    )


def solve_pseudovalues(spec, grid, mask, y_r, sigma2, cg_tol=DEFAULT_CG_TOL,
                       cg_maxiter=DEFAULT_CG_MAXITER, warm_start=None, eig=None):
    """Gap pseudovalues making the full-lattice solve match the regular-only one.

    Solves (V Ainv V^T) y_g = -V Ainv W^T y_r with A = K + sigma2*I, where V/W
    gather gap/regular entries; every operator application is a scatter into
    the full lattice, an eigenbasis solve, and a gather back.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be > 0, got {sigma2}")
    if mask.spatial_shape != grid.spatial_shape:
        raise ValidationError(
            f"mask lattice {mask.spatial_shape} does not match grid spatial "
            f"shape {grid.spatial_shape}"
        )
    n_param, n_time = grid.n_param, grid.n_time
    reg_full, gap_full = lift_mask(mask, n_param, n_time)
    y_r = np.asarray(y_r, dtype=np.float64).ravel()
    if y_r.size != reg_full.size:
        raise ValidationError(
            f"y_r has {y_r.size} entries, expected {reg_full.size} "
            f"(N*N_r*N_t = {n_param}*{mask.n_regular}*{n_time})"
        )
    if mask.n_gap == 0:
        return PseudoValueSolution(np.empty(0), 0, 0.0)
    if eig is None:
        eig = eig_factors(product_covariance(spec, grid))
    shape = grid.shape

    def ainv_gather(full_flat):
        sol = inverse_apply(eig, sigma2, full_flat.reshape(shape))
        return sol.ravel()[gap_full]

    def op(q):
        full = np.zeros(grid.n_total)
        full[gap_full] = q
        return ainv_gather(full)

    full_r = np.zeros(grid.n_total)
    full_r[reg_full] = y_r
    rhs = -ainv_gather(full_r)

    y_g, iters, residual = conjugate_gradient(op, rhs, x0=warm_start,
                                              tol=cg_tol, maxiter=cg_maxiter)
    y_g = perturb_pseudovalues(y_g)
    return PseudoValueSolution(y_g, iters, residual)


def reconstruct_full_y(grid, mask, y_r, pseudo):
    """Scatter observed values and pseudovalues into a full field tensor."""
    reg_full, gap_full = lift_mask(mask, grid.n_param, grid.n_time)
    full = np.zeros(grid.n_total)
    full[reg_full] = np.asarray(y_r, dtype=np.float64).ravel()
    if pseudo.y_g.size:
        full[gap_full] = pseudo.y_g
    return full.reshape(grid.shape)


@dataclass
class GappyModel:
    """Full-lattice fitted model built on reconstructed observations.

    ``fitted.alpha`` is zero (to solver tolerance) at every lifted gap
    entry, so restricting it to the regular entries gives exactly the
    regular-points-only representer weights.
    """

    fitted: FittedModel
    mask: GappyMask
    pseudo: PseudoValueSolution
    gap_alpha_inf: float


def fit_gappy(spec, grid, mask, y_r, sigma2, cg_tol=DEFAULT_CG_TOL,
              cg_maxiter=DEFAULT_CG_MAXITER, warm_start=None, center=False):
    """Solve pseudovalues, reconstruct the full field, fit on the lattice."""
    y_r = np.asarray(y_r, dtype=np.float64).ravel()
    y_mean = float(y_r.mean()) if center else 0.0
    yc = y_r - y_mean
    eig = eig_factors(product_covariance(spec, grid))
    pseudo = solve_pseudovalues(spec, grid, mask, yc, sigma2, cg_tol=cg_tol,
                                cg_maxiter=cg_maxiter, warm_start=warm_start,
                                eig=eig)
    y_full = reconstruct_full_y(grid, mask, yc, pseudo)
    model = fit(spec, grid, y_full, sigma2, center=False, eig=eig)
    model.y_mean = y_mean
    _, gap_full = lift_mask(mask, grid.n_param, grid.n_time)
    gap_alpha = model.alpha.ravel()[gap_full]
    gap_inf = float(np.abs(gap_alpha).max()) if gap_alpha.size else 0.0
    # Exactness check: alpha at the gaps is the (negated) CG residual, so it
    # should sit near cg_tol * ||rhs||.  A gross violation means the solve is
    # wrong, not merely loose.
    scale = max(1.0, float(np.linalg.norm(yc)) / sigma2)
    if gap_inf > 100.0 * cg_tol * scale:
        raise NumericalError(
            f"gap coefficients not annihilated (max |alpha_gap| = {gap_inf:.3e})"
        )
    return GappyModel(model, mask, pseudo, gap_inf)


def gappy_nlml(spec, grid, mask, y_r, sigma2, cg_tol=DEFAULT_CG_TOL,
               cg_maxiter=DEFAULT_CG_MAXITER, warm_start=None):
    """NLML of the regular-points GP computed through the full lattice.

    The quadratic form is exact: with pseudovalues in place,
    y_r^T (K_r + s I)^-1 y_r = y^T (K + s I)^-1 y.  The log determinant has
    no structured exact form; the largest N*N_r*N_t eigenvalues of the
    full-lattice covariance (without the noise shift), scaled by
    N_r/M, approximate the restricted spectrum.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be > 0, got {sigma2}")
    eig = eig_factors(product_covariance(spec, grid))
    pseudo = solve_pseudovalues(spec, grid, mask, y_r, sigma2, cg_tol=cg_tol,
                                cg_maxiter=cg_maxiter, warm_start=warm_start,
                                eig=eig)
    y_full = reconstruct_full_y(grid, mask, y_r, pseudo)
    w = kron_matvec([u.T for u in eig.eigvecs], y_full)
    g = eig.eig_tensor() + sigma2
    if g.min() <= 0:
        raise NumericalError(
            f"shifted eigenvalue tensor not positive (min {g.min():.6e})"
        )
    quad = float(np.sum(w * w / g))
    n_r = grid.n_param * mask.n_regular * grid.n_time
    logdet = nystrom_logdet(eig, sigma2, n_r, mask.n_regular, mask.m)
    value = 0.5 * quad + 0.5 * logdet + 0.5 * n_r * LOG_2PI
    if not np.isfinite(value):
        raise NumericalError(f"gappy NLML is not finite ({value})")
    return GappyNlmlResult(value, quad, logdet, mask.n_gap > 0,
                           pseudo.cg_iterations, pseudo)


def nystrom_logdet(eig, sigma2, n_r, n_regular_spatial, m_spatial):
    """Scaled-spectrum approximation of log|K_r + sigma2 I|.

    Takes the n_r largest eigenvalues of the full-lattice covariance,
    multiplies by the observation fraction N_r/M, shifts by the noise, and
    sums the logs.  Exact when there are no gaps (fraction 1, full
    spectrum).
    """
    lam = eig.eig_tensor().ravel()
    if n_r < lam.size:
        top = np.partition(lam, lam.size - n_r)[lam.size - n_r:]
    else:
        top = lam
    scaled = (n_regular_spatial / m_spatial) * top + sigma2
    if scaled.min() <= 0:
        raise NumericalError(
            f"scaled eigenvalue not positive in log-determinant "
            f"(min {scaled.min():.6e})"
        )
    return float(np.log(scaled).sum())


def _lifted_regular_selection(grid, test_mask, n_points):
    if test_mask is None:
        return np.arange(n_points)
    reg_full, _ = lift_mask(test_mask, grid.n_param, grid.n_time)
    return reg_full


def gappy_predict_mean(model, test_grid, test_mask=None):
    """Posterior mean at the regular points of a (possibly gappy) test grid.

    Full-lattice mean with the reconstructed representer weights, gathered
    at the regular test entries; exact with respect to the regular-only GP.
    """
    full = predict_mean(model.fitted, test_grid).ravel()
    sel = _lifted_regular_selection(test_grid, test_mask, full.size)
    return full[sel]


def gappy_predict_var_bounds(model, test_grid, test_mask=None):
    """Lower/upper posterior-variance bounds at regular test points.

    Lower: exact variance of the full-lattice GP (more observations never
    increase posterior variance).  Upper: Rayleigh-quotient bound
    prior - ||k_regular||^2 / (lambda_max + sigma2), with the squared
    cross-covariance row norm restricted to regular training entries via a
    masked Kronecker product.
    """
    fitted = model.fitted
    lower_full = predict_var(fitted, test_grid).ravel()

    cross = cross_covariance(fitted.spec, fitted.grid, test_grid)
    train_grid = fitted.grid
    reg_field = model.mask.regular_field()
    mask_tensor = np.broadcast_to(
        reg_field.reshape((1,) + model.mask.spatial_shape + (1,)),
        (train_grid.n_param,) + model.mask.spatial_shape + (train_grid.n_time,),
    ).reshape(train_grid.shape)
    rowsq = row_sq_project(cross, mask=mask_tensor).ravel()
    lam_max = fitted.eig.lambda_max()
    prior = prior_variance(fitted.spec, test_grid).ravel()
    upper_full = prior - rowsq / (lam_max + fitted.sigma2)

    sel = _lifted_regular_selection(test_grid, test_mask, lower_full.size)
    lower = lower_full[sel]
    upper = upper_full[sel]
    if np.any(lower > upper + 1e-10 * max(1.0, float(prior.max()))):
        raise NumericalError(
            "variance bounds crossed (lower > upper); kernel or mask is wrong"
        )
    return lower, upper
