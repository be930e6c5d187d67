"""Dense reference GP: closed forms and its own finite-difference gradient."""

import numpy as np
import pytest

from kgp.dense_gp import DenseGP, dense_nlml, dense_nlml_grad_fd, dense_predict
from kgp.errors import ValidationError
from kgp.grids import ProductGrid
from kgp.kernels import BaseKernel, FactorKernel, identity_map, ProductKernelSpec

LOG_2PI = np.log(2 * np.pi)


def point_grid(mu=0.0, x=0.0):
    return ProductGrid.from_arrays(np.array([[mu]]), [np.array([[x]])])


def unit_spec():
    return ProductKernelSpec([
        FactorKernel(identity_map(1), BaseKernel("se", [0.0])),
        FactorKernel(identity_map(1), BaseKernel("se", [0.0])),
    ])


class TestDenseNlmlClosedForms:
    def test_single_point_zero_noise_zero_target(self):
        gp = DenseGP.from_grid(unit_spec(), point_grid(), np.zeros((1, 1)), 0.0)
        assert dense_nlml(gp) == pytest.approx(0.5 * LOG_2PI, abs=1e-12)

    def test_single_point_unit_noise(self):
        gp = DenseGP.from_grid(unit_spec(), point_grid(),
                               2.0 * np.ones((1, 1)), 1.0)
        expect = 1.0 + 0.5 * np.log(2.0) + 0.5 * LOG_2PI
        assert dense_nlml(gp) == pytest.approx(expect, abs=1e-12)

    def test_cap_refuses_large_instances(self):
        rng = np.random.default_rng(0)
        grid = ProductGrid.from_arrays(
            rng.standard_normal((3, 1)), [rng.uniform(0, 1, size=(4, 1))])
        with pytest.raises(ValidationError, match="cap"):
            DenseGP.from_grid(unit_spec(), grid, np.zeros(grid.shape), 0.1, cap=10)


class TestDensePredictLimits:
    def _fitted(self, sigma2):
        rng = np.random.default_rng(1)
        xs = np.linspace(0, 1, 6)[:, None]
        grid = ProductGrid.from_arrays(np.array([[0.0]]), [xs])
        spec = ProductKernelSpec([
            FactorKernel(identity_map(1), BaseKernel("matern52", [np.log(0.5)])),
            FactorKernel(identity_map(1), BaseKernel("matern52", [np.log(0.4)])),
        ])
        # smooth targets: a kernel-weighted combination stays recoverable in
        # the small-noise interpolation limit
        gp_probe = DenseGP.from_grid(spec, grid, np.zeros(grid.shape), 1.0)
        k = gp_probe.kernel_matrix()
        y = (k @ rng.standard_normal(6)).reshape(grid.shape)
        return DenseGP.from_grid(spec, grid, y, sigma2), grid, y

    def test_interpolation_limit(self):
        gp, grid, y = self._fitted(1e-10)
        mean, var = dense_predict(gp, grid.full_points())
        assert np.abs(mean - y.ravel()).max() <= 1e-4 * np.ptp(y)
        assert var.max() <= 1e-6

    def test_prior_reversion_far_from_data(self):
        gp, grid, _ = self._fitted(0.01)
        far = np.array([[0.0, 50.0]])
        mean, var = dense_predict(gp, far)
        assert abs(mean[0]) < 1e-8
        assert var[0] == pytest.approx(1.0, abs=1e-8)

    def test_posterior_never_exceeds_prior(self):
        gp, grid, _ = self._fitted(0.05)
        rng = np.random.default_rng(2)
        test = np.hstack([np.zeros((40, 1)), rng.uniform(-1, 2, size=(40, 1))])
        _, var = dense_predict(gp, test)
        assert np.all(var <= 1.0 + 1e-10)


class TestDenseGradFd:
    def test_frozen_parameter_has_zero_gradient(self):
        grad = dense_nlml_grad_fd(lambda t: float(t[0] ** 2), np.array([1.0, 3.0]))
        assert grad[1] == 0.0

    def test_noise_gradient_matches_analytic(self):
        rng = np.random.default_rng(3)
        xs = np.sort(rng.uniform(0, 1, size=10))[:, None]
        grid = ProductGrid.from_arrays(np.array([[0.0]]), [xs])
        spec = ProductKernelSpec([
            FactorKernel(identity_map(1), BaseKernel("se", [0.0])),
            FactorKernel(identity_map(1), BaseKernel("se", [np.log(0.3)])),
        ])
        y = rng.standard_normal(grid.shape)
        sigma2 = 0.2

        def nlml_of_lognoise(theta):
            gp = DenseGP.from_grid(spec, grid, y, float(np.exp(theta[0])))
            return dense_nlml(gp)

        fd = dense_nlml_grad_fd(nlml_of_lognoise, np.array([np.log(sigma2)]))[0]
        gp = DenseGP.from_grid(spec, grid, y, sigma2)
        ky = gp.kernel_matrix() + sigma2 * np.eye(10)
        alpha = np.linalg.solve(ky, y.ravel())
        analytic = (-0.5 * alpha @ alpha
                    + 0.5 * np.trace(np.linalg.inv(ky))) * sigma2
        assert fd == pytest.approx(analytic, rel=1e-4)

    def test_bitwise_match_with_training_grad_fd(self):
        from kgp.training import grad_fd

        def f(t):
            return float(np.sin(t[0]) + t[1] ** 3)

        theta = np.array([0.3, -1.2])
        a = dense_nlml_grad_fd(f, theta, step=1e-5)
        b = grad_fd(f, theta, fd_step=1e-5)
        np.testing.assert_array_equal(a, b)
