"""Burgers solver, lattice embedding, analytic maps, PCA, error metric."""

import os

import numpy as np
import pytest

from kgp.datagen import (
    AnalyticMap,
    BurgersConfig,
    ScatteredSnapshot,
    apply_map,
    burgers_solve,
    embed_to_lattice,
    pca_reduce,
    relative_error,
    sobol_parameters,
)
from kgp.errors import NumericalError, ValidationError


class TestBurgersConfig:
    def test_mu1_outside_box_rejected(self):
        with pytest.raises(ValidationError, match="mu1"):
            BurgersConfig(mu1=6.0, mu2=0.02)

    def test_mu2_outside_box_rejected(self):
        with pytest.raises(ValidationError, match="mu2"):
            BurgersConfig(mu1=5.0, mu2=0.5)


class TestBurgersSolve:
    def setup_method(self):
        self.cfg = BurgersConfig(mu1=4.3, mu2=0.021, m_spatial=64, n_time=40,
                                 t_final=20.0)
        self.u = burgers_solve(self.cfg)

    def test_initial_condition_column(self):
        np.testing.assert_array_equal(self.u[:, 0], np.ones(64))

    def test_inflow_boundary_holds_mu1(self):
        np.testing.assert_array_equal(self.u[0, 1:], np.full(39, 4.3))

    def test_solution_finite_and_bounded(self):
        assert np.isfinite(self.u).all()
        assert self.u.min() >= 1.0 - 1e-12
        assert self.u.max() < 10.0

    def test_shock_propagates_right(self):
        # the inflow plateau widens over time
        front_early = np.sum(self.u[:, 5] > 2.0)
        front_late = np.sum(self.u[:, -1] > 2.0)
        assert front_late > front_early

    def test_flux_form_conservation_balance(self):
        # sum of interior cells changes exactly by boundary fluxes + source
        cfg = BurgersConfig(mu1=5.0, mu2=0.02, m_spatial=32, n_time=3,
                            t_final=1.0)
        x = cfg.x
        dx = x[1] - x[0]
        source = 0.02 * np.exp(cfg.mu2 * x)

        def godunov(a, b):
            fa = max(a, 0.0)
            fb = min(b, 0.0)
            return max(0.5 * fa * fa, 0.5 * fb * fb)

        u = np.ones(32)
        u[0] = 5.0
        dt = 0.01
        for _ in range(50):
            q_before = u[1:].sum() * dx
            flux = np.array([godunov(u[i], u[i + 1]) for i in range(31)])
            f_out = 0.5 * max(u[-1], 0.0) ** 2
            unew = u.copy()
            unew[1:-1] -= (dt / dx) * (flux[1:] - flux[:-1])
            unew[1:-1] += dt * source[1:-1]
            unew[-1] -= (dt / dx) * (f_out - flux[-1])
            unew[-1] += dt * source[-1]
            q_after = unew[1:].sum() * dx
            balance = (q_after - q_before
                       - dt * (flux[0] - f_out)
                       - dt * source[1:].sum() * dx)
            assert abs(balance) <= 1e-8 * abs(q_after)
            u = unew

    def test_grid_refinement_self_convergence(self):
        # halving dx should shrink the error at first order or better
        def solve(m):
            cfg = BurgersConfig(mu1=4.5, mu2=0.015, m_spatial=m, n_time=6,
                                t_final=4.0)
            return burgers_solve(cfg)

        coarse = solve(65)
        mid = solve(129)
        fine = solve(257)
        # compare on the shared (every other point) nodes at the final time
        e_coarse = np.abs(coarse[:, -1] - fine[::4, -1]).mean()
        e_mid = np.abs(mid[:, -1] - fine[::2, -1]).mean()
        assert e_mid < 0.7 * e_coarse

    def test_cfl_failure_after_max_halvings(self):
        # 4000 nodes, one giant output step: needs > 2^10 substeps
        cfg = BurgersConfig(mu1=5.5, mu2=0.03, m_spatial=4000, n_time=2,
                            t_final=35.0)
        with pytest.raises(NumericalError, match="CFL"):
            burgers_solve(cfg)

    def test_backends_agree_bitwise(self):
        cfg = BurgersConfig(mu1=4.8, mu2=0.025, m_spatial=48, n_time=12,
                            t_final=8.0)
        u_numba = burgers_solve(cfg)
        os.environ["KGP_NUMBA"] = "0"
        try:
            u_numpy = burgers_solve(cfg)
        finally:
            os.environ.pop("KGP_NUMBA")
        np.testing.assert_array_equal(u_numba, u_numpy)


class TestSobolParameters:
    def test_within_box_and_deterministic(self):
        p1 = sobol_parameters(20, seed=5)
        p2 = sobol_parameters(20, seed=5)
        np.testing.assert_array_equal(p1, p2)
        assert np.all(p1[:, 0] >= 4.25) and np.all(p1[:, 0] <= 5.5)
        assert np.all(p1[:, 1] >= 0.015) and np.all(p1[:, 1] <= 0.03)

    def test_different_seeds_differ(self):
        assert not np.array_equal(sobol_parameters(8, seed=1),
                                  sobol_parameters(8, seed=2))


class TestEmbedToLattice:
    def test_sources_on_lattice_are_copied_exactly(self):
        xs = np.linspace(0, 1, 7)
        ys = np.linspace(0, 1, 5)
        mesh = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = 3.0 * pts[:, 0] - pts[:, 1]
        emb = embed_to_lattice(ScatteredSnapshot(pts, vals), (xs, ys), 0.3)
        np.testing.assert_array_equal(emb.values.ravel(), vals)
        assert emb.mask.n_gap == 0

    def test_dense_linear_field_reproduced_on_interior(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, size=(20000, 2))
        vals = pts[:, 0] + 2.0 * pts[:, 1]
        axes = (np.linspace(0, 1, 11), np.linspace(0, 1, 11))
        emb = embed_to_lattice(ScatteredSnapshot(pts, vals), axes, 0.12)
        xg, yg = np.meshgrid(axes[0][1:-1], axes[1][1:-1], indexing="ij")
        truth = xg + 2.0 * yg
        err = np.abs(emb.values[1:-1, 1:-1] - truth).max()
        assert err <= 1e-2 * (truth.max() - truth.min())

    def test_annulus_cloud_gaps_inside_hole(self):
        rng = np.random.default_rng(1)
        r = rng.uniform(0.5, 1.0, size=3000)
        th = rng.uniform(0, 2 * np.pi, size=3000)
        pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        vals = pts[:, 0]
        axes = (np.linspace(-1, 1, 15), np.linspace(-1, 1, 15))
        emb = embed_to_lattice(ScatteredSnapshot(pts, vals), axes, 0.12)
        xg, yg = np.meshgrid(axes[0], axes[1], indexing="ij")
        rad = np.hypot(xg, yg)
        regular = emb.mask.regular_field().astype(bool)
        # every deep-interior-hole point is a gap; every mid-annulus point is
        # regular (the boundary ring can go either way within the stencil)
        assert not regular[rad < 0.5 - 0.12].any()
        assert regular[(rad > 0.62) & (rad < 0.88)].all()
        assert np.isnan(emb.values[~regular]).all()

    def test_no_sources_in_range_anywhere_rejected(self):
        snap = ScatteredSnapshot(np.array([[10.0, 10.0]]), np.array([1.0]))
        with pytest.raises(ValidationError, match="stencil"):
            embed_to_lattice(snap, (np.linspace(0, 1, 4), np.linspace(0, 1, 4)),
                             0.1)

    def test_backend_parity(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 1, size=(500, 2))
        vals = np.sin(pts[:, 0]) * pts[:, 1]
        axes = (np.linspace(0, 1, 9), np.linspace(0, 1, 9))
        a = embed_to_lattice(ScatteredSnapshot(pts, vals), axes, 0.2)
        os.environ["KGP_NUMBA"] = "0"
        try:
            b = embed_to_lattice(ScatteredSnapshot(pts, vals), axes, 0.2)
        finally:
            os.environ.pop("KGP_NUMBA")
        np.testing.assert_array_equal(
            np.nan_to_num(a.values, nan=-1e9),
            np.nan_to_num(b.values, nan=-1e9))
        np.testing.assert_array_equal(a.mask.regular_idx, b.mask.regular_idx)


class TestAnalyticMaps:
    def test_affine_identity_is_a_no_op(self):
        amap = AnalyticMap(kind="affine", matrix=np.eye(2))
        snap = ScatteredSnapshot(np.random.default_rng(0).standard_normal((10, 2)),
                                 np.zeros(10))
        out = apply_map(amap, snap)
        np.testing.assert_array_equal(out.points, snap.points)

    def test_affine_round_trip(self):
        rng = np.random.default_rng(1)
        amap = AnalyticMap(kind="affine",
                           matrix=np.array([[2.0, 0.3], [0.0, 1.5]]),
                           offset=np.array([1.0, -2.0]))
        pts = rng.standard_normal((50, 2))
        out = amap.inverse(amap.forward(pts))
        assert np.abs(out - pts).max() <= 1e-10

    def test_annulus_inner_corner_convention(self):
        amap = AnalyticMap(kind="annulus", r_inner=1.0, r_outer=2.0)
        np.testing.assert_allclose(amap.forward([[1.0, 0.0]]), [[0.0, 0.0]],
                                   atol=1e-12)

    def test_annulus_round_trip_100_points(self):
        rng = np.random.default_rng(2)
        r = rng.uniform(1.0, 2.0, size=100)
        th = rng.uniform(0.0, 2 * np.pi, size=100)
        pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        amap = AnalyticMap(kind="annulus", r_inner=1.0, r_outer=2.0)
        out = amap.inverse(amap.forward(pts))
        assert np.abs(out - pts).max() <= 1e-10

    def test_point_outside_domain_lists_indices(self):
        amap = AnalyticMap(kind="annulus", r_inner=1.0, r_outer=2.0)
        with pytest.raises(ValidationError, match="indices"):
            amap.forward([[0.1, 0.0], [1.5, 0.0], [3.0, 0.0]])

    def test_values_unchanged_by_mapping(self):
        amap = AnalyticMap(kind="annulus", r_inner=1.0, r_outer=2.0)
        snap = ScatteredSnapshot(np.array([[1.5, 0.0], [0.0, 1.2]]),
                                 np.array([7.0, 9.0]))
        out = apply_map(amap, snap, "forward")
        np.testing.assert_array_equal(out.values, snap.values)


class TestPca:
    def test_rank_one_data_explained_by_first_component(self):
        rng = np.random.default_rng(3)
        u = rng.standard_normal(30)[:, None]
        v = rng.standard_normal(8)[None, :]
        res = pca_reduce(u @ v, 1)
        total = res.explained_variance.sum()
        # trailing variance is numerically zero for rank-1 data
        full = pca_reduce(u @ v, 8)
        assert res.explained_variance[0] / full.explained_variance.sum() >= 1 - 1e-10

    def test_axis_aligned_design_recovers_axes(self):
        rng = np.random.default_rng(4)
        x = np.zeros((40, 3))
        x[:, 0] = 10.0 * rng.standard_normal(40)
        x[:, 1] = 1.0 * rng.standard_normal(40)
        x[:, 2] = 0.1 * rng.standard_normal(40)
        res = pca_reduce(x, 2)
        assert abs(res.basis[0, 0]) > 0.99
        assert abs(res.basis[1, 1]) > 0.99

    def test_full_rank_reconstruction_is_exact(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((20, 10))
        res = pca_reduce(x, 10)
        rec = res.coefficients @ res.basis + res.mean
        assert np.abs(rec - x).max() <= 1e-10

    def test_explained_variance_non_increasing(self):
        rng = np.random.default_rng(6)
        res = pca_reduce(rng.standard_normal((30, 12)), 12)
        assert np.all(np.diff(res.explained_variance) <= 1e-12)

    def test_k_too_large_rejected(self):
        with pytest.raises(ValidationError, match="k="):
            pca_reduce(np.ones((3, 5)), 4)


class TestRelativeError:
    def test_exact_prediction_scores_zero(self):
        v = np.array([1.0, 2.0])
        assert relative_error(v, v) == 0.0

    def test_zero_prediction_scores_one(self):
        v = np.array([3.0, 4.0])
        assert relative_error(v, np.zeros(2)) == pytest.approx(1.0)

    def test_one_percent_scaling(self):
        v = np.random.default_rng(7).standard_normal(100)
        assert relative_error(v, 1.01 * v) == pytest.approx(0.01, abs=1e-12)

    def test_zero_norm_truth_rejected(self):
        with pytest.raises(ValidationError, match="zero-norm"):
            relative_error(np.zeros(3), np.ones(3))
