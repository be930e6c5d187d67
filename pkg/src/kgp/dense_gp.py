"""Reference dense Gaussian process, the ground truth everything else is
diffed against.

Builds the full n x n kernel matrix by pointwise product-kernel evaluation
over the enumerated inputs and runs textbook Cholesky-based inference.  No
Kronecker identities, no eigendecompositions, no structure exploitation:
that is the point.  A size cap keeps O(n^3) honest-by-construction rather
than accidentally slow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import NumericalError, ValidationError
from .kernels import gram

log = logging.getLogger(__name__)

DEFAULT_CAP = 2000
LOG_2PI = np.log(2.0 * np.pi)


def _factor_blocks(z, axis_dims):
    """Split stacked input rows into per-factor coordinate blocks."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != sum(axis_dims):
        raise ValidationError(
            f"inputs must be n x {sum(axis_dims)}, got {z.shape}"
        )
    blocks, off = [], 0
    for d in axis_dims:
        blocks.append(z[:, off:off + d])
        off += d
    return blocks


@dataclass
class DenseGP:
    """Zero-mean GP over explicitly enumerated inputs."""

    spec: object
    z: np.ndarray
    axis_dims: tuple
    y: np.ndarray
    sigma2: float
    cap: int = DEFAULT_CAP
    _chol: object = field(default=None, repr=False)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.axis_dims = tuple(int(d) for d in self.axis_dims)
        n = self.z.shape[0]
        if n > self.cap:
            raise ValidationError(
                f"dense oracle refuses {n} points (cap {self.cap}); "
                "raise cap explicitly if you really want O(n^3)"
            )
        if self.y.size != n:
            raise ValidationError(f"y has {self.y.size} entries for {n} inputs")
        # sigma2 = 0 is allowed here (unlike the structured path): the
        # Cholesky itself certifies K_y is SPD
        if self.sigma2 < 0:
            raise ValidationError(f"sigma2 must be >= 0, got {self.sigma2}")
        _factor_blocks(self.z, self.axis_dims)  # shape check

    @classmethod
    def from_grid(cls, spec, grid, y, sigma2, cap=DEFAULT_CAP):
        y = grid.check_field(y)
        return cls(spec, grid.full_points(), tuple(a.dim for a in grid.axes),
                   y.ravel(), sigma2, cap)

    def kernel_matrix(self, za=None, zb=None):
        """Pointwise product-kernel matrix between two input sets."""
        za = self.z if za is None else np.asarray(za, dtype=np.float64)
        symmetric = zb is None
        zb = za if symmetric else np.asarray(zb, dtype=np.float64)
        blocks_a = _factor_blocks(za, self.axis_dims)
        blocks_b = _factor_blocks(zb, self.axis_dims)
        k = np.ones((za.shape[0], zb.shape[0]))
        for fk, a, b in zip(self.spec.factors, blocks_a, blocks_b):
            k *= gram(fk, a) if (symmetric and a is b) else gram(fk, a, b)
        return k

    def _cholesky(self):
        if self._chol is None:
            ky = self.kernel_matrix() + self.sigma2 * np.eye(self.z.shape[0])
            try:
                self._chol = cho_factor(ky, lower=True)
            except np.linalg.LinAlgError:
                pivot = float(np.linalg.eigvalsh(ky).min())
                raise NumericalError(
                    f"dense Cholesky failed; smallest pivot {pivot:.6e}"
                )
        return self._chol


def dense_nlml(gp: DenseGP) -> float:
    """0.5 y^T Ky^-1 y + 0.5 log|Ky| + (n/2) log(2 pi), via Cholesky."""
    c, lower = gp._cholesky()
    alpha = cho_solve((c, lower), gp.y)
    logdet = 2.0 * float(np.log(np.diagonal(c)).sum())
    n = gp.y.size
    return float(0.5 * gp.y @ alpha + 0.5 * logdet + 0.5 * n * LOG_2PI)


def dense_predict(gp: DenseGP, test):
    """Posterior mean and variance at explicit test rows.

    Variance is clamped at zero (tiny negatives from cancellation near
    training points are expected and logged at most once per call).
    """
    test = np.asarray(test, dtype=np.float64)
    if test.ndim == 1:
        test = test[None, :]
    c, lower = gp._cholesky()
    kx = gp.kernel_matrix(test, gp.z)
    mean = kx @ cho_solve((c, lower), gp.y)
    v = solve_triangular(c, kx.T, lower=lower)
    amp = float(np.prod([fk.base.outputscale for fk in gp.spec.factors]))
    var = amp - np.sum(v * v, axis=0)
    if var.min() < -1e-10 * max(amp, 1.0):
        raise NumericalError(
            f"dense posterior variance strongly negative (min {var.min():.3e})"
        )
    if np.any(var < 0):
        log.warning("clamped %d slightly negative dense variances", int((var < 0).sum()))
    return mean, np.maximum(var, 0.0)


def dense_nlml_grad_fd(nlml_of_theta, theta, step=1e-5):
    """Central finite differences of a scalar objective over log-parameters."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        f_up, f_down = nlml_of_theta(up), nlml_of_theta(down)
        if not (np.isfinite(f_up) and np.isfinite(f_down)):
            raise NumericalError(
                f"objective non-finite at perturbation of component {i}"
            )
        grad[i] = (f_up - f_down) / (2.0 * step)
    return grad
