"""Timing harnesses: lattice-size scaling and kernel-backend comparison.

``bench_grid`` measures the structured NLML and prediction wall time on 1D
lattices of doubling spatial size, with the dense oracle alongside where it
fits under its cap, so the scaling gap is visible in one CSV.  The NLML
column times the full call including the per-factor eigendecompositions;
``t_nlml_solve`` isolates the post-eigendecomposition work, which is the
part that scales with the lattice volume rather than cubically in the
factor size.

``bench_kernels`` compares the numba and numpy twins of the hot kernels.
"""

from __future__ import annotations

import os
import time

import numpy as np

from .dense_gp import DenseGP, dense_nlml
from .errors import ValidationError
from .grid_gp import fit, grid_nlml, predict_mean, predict_var
from .grids import ProductGrid
from .kernels import default_spec_for_grid, product_covariance
from .kronalg import eig_factors

BENCH_N_PARAM = 4
BENCH_N_TIME = 8
BENCH_DENSE_CAP = 4200


def _median_time(fn, repeats, warmup=True):
    if warmup:
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_grid(sizes, repeats=3, seed=0, n_param=BENCH_N_PARAM,
               n_time=BENCH_N_TIME, dense_cap=BENCH_DENSE_CAP):
    """Rows of timing data across 1D spatial sizes; ratios against size/2."""
    sizes = sorted(int(s) for s in sizes)
    if not sizes:
        raise ValidationError("bench needs at least one size")
    rng = np.random.default_rng(seed)
    rows = []
    prev = {}
    for m in sizes:
        params = rng.uniform(-1.0, 1.0, size=(n_param, 2))
        xs = np.linspace(0.0, 1.0, m)[:, None]
        ts = np.linspace(0.0, 1.0, n_time)[:, None]
        grid = ProductGrid.from_arrays(params, [xs], ts)
        spec = default_spec_for_grid(grid, family="matern52", deep=False,
                                     seed=seed)
        y = rng.standard_normal(grid.shape)
        sigma2 = 0.1

        t_nlml = _median_time(lambda: grid_nlml(spec, grid, y, sigma2), repeats)
        eig = eig_factors(product_covariance(spec, grid))
        t_solve = _median_time(
            lambda: grid_nlml(spec, grid, y, sigma2, eig=eig), repeats)
        model = fit(spec, grid, y, sigma2, eig=eig)
        t_predict = _median_time(
            lambda: (predict_mean(model, grid), predict_var(model, grid)),
            repeats)

        n_total = grid.n_total
        t_dense = None
        if n_total <= dense_cap:
            def run_dense():
                gp = DenseGP.from_grid(spec, grid, y, sigma2, cap=dense_cap)
                return dense_nlml(gp)
            # single shot, no warmup: at the cap this is seconds per call,
            # and O(n^3) swamps measurement noise anyway
            t_dense = _median_time(run_dense, 1, warmup=False)
        row = {
            "M": m,
            "n_total": n_total,
            "t_nlml": t_nlml,
            "t_nlml_solve": t_solve,
            "t_predict": t_predict,
            "ratio_nlml": t_nlml / prev["t_nlml"] if prev.get("M") == m // 2 else None,
            "t_dense": t_dense,
            "ratio_dense": (
                t_dense / prev["t_dense"]
                if t_dense is not None and prev.get("M") == m // 2
                and prev.get("t_dense") is not None else None
            ),
        }
        rows.append(row)
        prev = row
    return rows


BENCH_COLUMNS = ("M", "n_total", "t_nlml", "t_nlml_solve", "t_predict",
                 "ratio_nlml", "t_dense", "ratio_dense")


def write_bench_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(BENCH_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in BENCH_COLUMNS:
                v = row[col]
                if v is None:
                    cells.append("")
                elif isinstance(v, int):
                    cells.append(str(v))
                else:
                    cells.append(f"{v:.6g}")
            fh.write(",".join(cells) + "\n")


def bench_kernels(repeats=3, seed=0):
    """Numba vs numpy timings for the hot kernels, one row per case."""
    from . import _accel
    from .datagen import BurgersConfig, burgers_solve

    rng = np.random.default_rng(seed)
    rows = []
    saved = os.environ.get("KGP_NUMBA")

    def timed(backend, fn):
        if backend == "numpy":
            os.environ["KGP_NUMBA"] = "0"
        else:
            os.environ.pop("KGP_NUMBA", None)
        try:
            fn()  # warmup (JIT compile on the numba path)
            return _median_time(fn, repeats)
        finally:
            if saved is None:
                os.environ.pop("KGP_NUMBA", None)
            else:
                os.environ["KGP_NUMBA"] = saved

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    for m in (256, 1024):
        cfg = BurgersConfig(mu1=5.0, mu2=0.02, m_spatial=m, n_time=64)
        per = {b: timed(b, lambda: burgers_solve(cfg)) for b in backends}
        for b in backends:
            rows.append({"kernel": "burgers_sweep", "size": m, "backend": b,
                         "seconds": per[b],
                         "speedup": per["numpy"] / per[b]})
    for nq in (1000, 4000):
        queries = rng.uniform(0, 1, size=(nq, 2))
        sources = rng.uniform(0, 1, size=(2000, 2))
        per = {b: timed(b, lambda: _accel.idw_neighbors(queries, sources, 0.1, 4))
               for b in backends}
        for b in backends:
            rows.append({"kernel": "idw_neighbors", "size": nq, "backend": b,
                         "seconds": per[b],
                         "speedup": per["numpy"] / per[b]})
    return rows


def write_kernel_bench_csv(rows, path):
    cols = ("kernel", "size", "backend", "seconds", "speedup")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(
                f"{row['kernel']},{row['size']},{row['backend']},"
                f"{row['seconds']:.6g},{row['speedup']:.3g}\n"
            )
