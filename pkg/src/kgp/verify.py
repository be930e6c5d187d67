"""Seeded verification suites behind the ``verify`` CLI command.

Each suite runs a fixed set of randomized checks against independent dense
references and reports one margin per check: the measured worst-case error
(or bound violation), which must stay at or below the check's tolerance.
Suites are deliberately small and fast; the exhaustive versions live in the
test suite.
"""

from __future__ import annotations

import numpy as np

from .dense_gp import DenseGP, dense_nlml, dense_predict
from .errors import KgpError
from .gappy_gp import GappyMask, fit_gappy, gappy_nlml, gappy_predict_var_bounds, lift_mask
from .grid_gp import fit, grid_nlml, predict_mean, predict_var
from .grids import ProductGrid
from .kernels import default_spec_for_grid, product_covariance

SUITES = ("kron", "oracle", "lemma1", "lemma2", "logdet")


# Instance builders (shared with the acceptance tests) -------------------------

def random_rect_instance(seed, max_points=500):
    """Random product grid + kernel + targets, small enough for the oracle."""
    rng = np.random.default_rng(seed)
    family = ("se", "matern52")[seed % 2]
    deep = (seed % 4) >= 2
    n_spatial_axes = 1 + (seed % 2)
    while True:
        n = int(rng.integers(2, 5))
        ms = [int(rng.integers(3, 7)) for _ in range(n_spatial_axes)]
        nt = int(rng.integers(2, 5))
        if n * int(np.prod(ms)) * nt <= max_points:
            break
    params = rng.uniform(-1.0, 1.0, size=(n, 2))
    spatial = [np.sort(rng.uniform(0.0, 1.0, size=m))[:, None] for m in ms]
    times = np.sort(rng.uniform(0.0, 1.0, size=nt))[:, None]
    grid = ProductGrid.from_arrays(params, spatial, times)
    spec = default_spec_for_grid(grid, family=family, deep=deep, widths=(4,),
                                 seed=seed + 1000)
    for fk in spec.factors:
        fk.base.log_lengthscales = np.log(
            rng.uniform(0.4, 1.2, size=fk.base.log_lengthscales.size)
        )
    spec.factors[0].base.log_outputscale = float(np.log(rng.uniform(0.5, 2.0)))
    y = rng.standard_normal(grid.shape)
    sigma2 = float(rng.uniform(0.05, 0.3))
    return spec, grid, y, sigma2


def random_gappy_instance(seed, gap_fraction, max_points=400):
    """Gappy instance: 2D spatial lattice with a random gap set."""
    rng = np.random.default_rng(seed)
    family = ("se", "matern52")[seed % 2]
    while True:
        n = int(rng.integers(2, 4))
        mx = int(rng.integers(4, 7))
        my = int(rng.integers(4, 7))
        nt = int(rng.integers(2, 4))
        if n * mx * my * nt <= max_points:
            break
    params = rng.uniform(-1.0, 1.0, size=(n, 2))
    spatial = [np.linspace(0.0, 1.0, mx)[:, None], np.linspace(0.0, 1.0, my)[:, None]]
    times = np.linspace(0.0, 1.0, nt)[:, None]
    grid = ProductGrid.from_arrays(params, spatial, times)
    spec = default_spec_for_grid(grid, family=family, deep=False, seed=seed + 2000)
    for fk in spec.factors:
        fk.base.log_lengthscales = np.log(
            rng.uniform(0.5, 1.0, size=fk.base.log_lengthscales.size)
        )
    m = mx * my
    n_gap = max(1, int(round(gap_fraction * m)))
    n_gap = min(n_gap, m - 1)
    gap_idx = rng.choice(m, size=n_gap, replace=False)
    regular = np.ones(m, dtype=bool)
    regular[gap_idx] = False
    mask = GappyMask.from_bool_field(regular.reshape(mx, my))
    y_full = rng.standard_normal(grid.shape)
    reg_full, _ = lift_mask(mask, grid.n_param, grid.n_time)
    y_r = y_full.ravel()[reg_full]
    sigma2 = float(rng.uniform(0.05, 0.3))
    return spec, grid, mask, y_r, sigma2


def dense_restricted(spec, grid, mask, y_r, sigma2):
    """Dense regular-points-only GP and its covariance pieces."""
    reg_full, _ = lift_mask(mask, grid.n_param, grid.n_time)
    z_r = grid.full_points()[reg_full]
    gp = DenseGP(spec, z_r, tuple(a.dim for a in grid.axes), y_r, sigma2)
    k_r = gp.kernel_matrix()
    return gp, k_r, reg_full


# Report plumbing ---------------------------------------------------------------

def _check(name, margin, tolerance):
    passed = True if tolerance is None else bool(margin <= tolerance)
    return {
        "name": name,
        "margin": float(margin),
        "tolerance": tolerance,
        "passed": passed,
    }


def _failed(name, tolerance, reason):
    return {
        "name": name,
        "margin": float("inf"),
        "tolerance": tolerance,
        "passed": False,
        "error": reason,
    }


def _report(suite, seed, checks):
    return {
        "suite": suite,
        "seed": seed,
        "checks": checks,
        "passed": bool(all(c["passed"] for c in checks)),
    }


def _rel(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / denom


# Suites -------------------------------------------------------------------------

def suite_kron(seed=0, trials=100, tol=1e-10):
    """Kronecker identity battery on random small factors."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in (
        "mixed_product", "inverse", "transpose", "trace", "determinant",
        "vec", "hadamard")}
    for _ in range(trials):
        na, nb = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        a = rng.standard_normal((na, na))
        b = rng.standard_normal((nb, nb))
        c = rng.standard_normal((na, na))
        d = rng.standard_normal((nb, nb))
        kab = np.kron(a, b)
        kcd = np.kron(c, d)
        worst["mixed_product"] = max(worst["mixed_product"], float(
            np.abs(kab @ kcd - np.kron(a @ c, b @ d)).max()))
        ai = a + na * np.eye(na)
        bi = b + nb * np.eye(nb)
        worst["inverse"] = max(worst["inverse"], float(
            np.abs(np.linalg.inv(np.kron(ai, bi))
                   - np.kron(np.linalg.inv(ai), np.linalg.inv(bi))).max()))
        worst["transpose"] = max(worst["transpose"], float(
            np.abs(kab.T - np.kron(a.T, b.T)).max()))
        worst["trace"] = max(worst["trace"], float(
            abs(np.trace(kab) - np.trace(a) * np.trace(b))))
        det_lhs = np.linalg.det(kab)
        det_rhs = np.linalg.det(a) ** nb * np.linalg.det(b) ** na
        scale = max(abs(det_lhs), abs(det_rhs), 1.0)
        worst["determinant"] = max(worst["determinant"],
                                   float(abs(det_lhs - det_rhs)) / scale)
        x = rng.standard_normal((na, nb))
        worst["vec"] = max(worst["vec"], float(
            np.abs((c @ x @ d.T).ravel(order="F")
                   - np.kron(d, c) @ x.ravel(order="F")).max()))
        worst["hadamard"] = max(worst["hadamard"], float(
            np.abs(kab * kcd - np.kron(a * c, b * d)).max()))
    return _report("kron", seed, [_check(k, v, tol) for k, v in worst.items()])


def suite_oracle(seed=0, n_instances=5, tol=1e-8):
    """Structured NLML/mean/variance against the dense GP."""
    checks = []
    for i in range(n_instances):
        s = seed + 17 * i
        try:
            spec, grid, y, sigma2 = random_rect_instance(s)
            gp = DenseGP.from_grid(spec, grid, y, sigma2)
            nl_err = _rel(grid_nlml(spec, grid, y, sigma2), dense_nlml(gp))
            model = fit(spec, grid, y, sigma2)
            mean = predict_mean(model, grid)
            var = predict_var(model, grid)
            mref, vref = dense_predict(gp, grid.full_points())
            checks.append(_check(f"nlml[{i}]", nl_err, tol))
            checks.append(_check(f"mean[{i}]", _rel(mean, mref), tol))
            checks.append(_check(f"var[{i}]", _rel(var, vref), tol))
        except KgpError as exc:
            checks.append(_failed(f"instance[{i}]", tol, str(exc)))
    return _report("oracle", seed, checks)


GAP_FRACTIONS = (0.1, 0.3, 0.5)
VERIFY_CG_TOL = 1e-8


def suite_lemma1(seed=0, tol_alpha=1e-7, tol_gap=1e-6):
    """Pseudovalue solve reproduces the dense restricted solve exactly."""
    checks = []
    for i, frac in enumerate(GAP_FRACTIONS):
        s = seed + 31 * i
        try:
            spec, grid, mask, y_r, sigma2 = random_gappy_instance(s, frac)
            model = fit_gappy(spec, grid, mask, y_r, sigma2,
                              cg_tol=VERIFY_CG_TOL, cg_maxiter=2000)
            _, k_r, reg_full = dense_restricted(spec, grid, mask, y_r, sigma2)
            alpha_dense = np.linalg.solve(
                k_r + sigma2 * np.eye(k_r.shape[0]), y_r)
            alpha = model.fitted.alpha.ravel()
            _, gap_full = lift_mask(mask, grid.n_param, grid.n_time)
            w_err = float(np.abs(alpha[reg_full] - alpha_dense).max())
            v_inf = float(np.abs(alpha[gap_full]).max()) if gap_full.size else 0.0
            checks.append(_check(f"w_alpha[{i}] frac={frac}", w_err, tol_alpha))
            checks.append(_check(f"v_alpha[{i}] frac={frac}", v_inf, tol_gap))
        except KgpError as exc:
            checks.append(_failed(f"instance[{i}] frac={frac}", tol_alpha, str(exc)))
    return _report("lemma1", seed, checks)


def suite_lemma2(seed=0, tol=1e-8):
    """Variance sandwich: dense restricted variance within [lower, upper]."""
    checks = []
    for i, frac in enumerate(GAP_FRACTIONS):
        s = seed + 53 * i
        try:
            spec, grid, mask, y_r, sigma2 = random_gappy_instance(s, frac)
            model = fit_gappy(spec, grid, mask, y_r, sigma2,
                              cg_tol=VERIFY_CG_TOL, cg_maxiter=2000)
            gp, _, reg_full = dense_restricted(spec, grid, mask, y_r, sigma2)
            lower, upper = gappy_predict_var_bounds(model, grid, mask)
            _, vref = dense_predict(gp, grid.full_points()[reg_full])
            lo_violation = float((lower - vref).max())
            up_violation = float((vref - upper).max())
            order_violation = float((lower - upper).max())
            checks.append(_check(f"lower[{i}] frac={frac}", lo_violation, tol))
            checks.append(_check(f"upper[{i}] frac={frac}", up_violation, tol))
            checks.append(_check(f"order[{i}] frac={frac}", order_violation, tol))
        except KgpError as exc:
            checks.append(_failed(f"instance[{i}] frac={frac}", tol, str(exc)))
    return _report("lemma2", seed, checks)


def suite_logdet(seed=0, tol=1e-8):
    """Interlacing of restricted eigenvalues; scaled-spectrum log-det bounds."""
    checks = []
    for i, frac in enumerate(GAP_FRACTIONS):
        s = seed + 71 * i
        try:
            spec, grid, mask, y_r, sigma2 = random_gappy_instance(s, frac)
            _, k_r, _ = dense_restricted(spec, grid, mask, y_r, sigma2)
            k_full = product_covariance(spec, grid).dense(limit=500)
            lam = np.sort(np.linalg.eigvalsh(k_full))[::-1]
            lam_r = np.sort(np.linalg.eigvalsh(k_r))[::-1]
            n_r = lam_r.size
            n_g = lam.size - n_r
            upper_violation = float((lam_r - lam[:n_r]).max())
            lower_violation = float((lam[n_g:n_g + n_r] - lam_r).max())
            checks.append(_check(f"interlace_hi[{i}] frac={frac}",
                                 upper_violation, tol))
            checks.append(_check(f"interlace_lo[{i}] frac={frac}",
                                 lower_violation, tol))
            res = gappy_nlml(spec, grid, mask, y_r, sigma2,
                             cg_tol=VERIFY_CG_TOL)
            hi = float(np.log(lam[:n_r] + sigma2).sum())
            lo = float(np.log(lam[n_g:n_g + n_r] + sigma2).sum())
            inside_violation = max(res.logdet - hi, lo - res.logdet)
            checks.append(_check(f"nystrom_in_bounds[{i}] frac={frac}",
                                 inside_violation, tol))
            exact = float(np.linalg.slogdet(
                k_r + sigma2 * np.eye(n_r))[1])
            checks.append(_check(f"nystrom_abs_error[{i}] frac={frac}",
                                 abs(res.logdet - exact), None))
        except KgpError as exc:
            checks.append(_failed(f"instance[{i}] frac={frac}", tol, str(exc)))
    return _report("logdet", seed, checks)


def run_suite(name, seed=0):
    if name == "kron":
        return suite_kron(seed)
    if name == "oracle":
        return suite_oracle(seed)
    if name == "lemma1":
        return suite_lemma1(seed)
    if name == "lemma2":
        return suite_lemma2(seed)
    if name == "logdet":
        return suite_logdet(seed)
    raise KeyError(name)
