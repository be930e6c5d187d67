"""Hot numeric kernels in two interchangeable flavors.

The finite-volume sweep of the Burgers solver and the inverse-distance
stencil search of the lattice embedder are the only scalar-loop hot spots
in the package; everything else is BLAS-bound linear algebra where numba
has nothing to add.  Each kernel exists twice: a numba ``@njit`` version
and a pure-numpy twin that performs the same elementwise operations in the
same order, so the two backends agree bitwise.

Backend selection: the env var ``KGP_NUMBA`` (default on) picks numba when
it is importable; set ``KGP_NUMBA=0`` to force the numpy path.  The choice
is read per call, so tests and benchmarks can flip it at runtime.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco


def numba_enabled():
    flag = os.environ.get("KGP_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


# Burgers finite-volume sweep -------------------------------------------------
#
# Nodes double as cells of width dx.  Node 0 is a pinned inflow value; the
# right boundary is zero-gradient outflow.  The interface flux is the exact
# Riemann flux for the convex flux u^2/2:
#     F(a, b) = max(f(max(a, 0)), f(min(b, 0))).
# The sweep advances n_sub equal substeps of size dt and bails out (return 1)
# the moment the CFL condition dt <= dx/max|u| stops holding, leaving the
# caller to retry from its checkpoint with a finer step.


@njit(cache=True)
def _burgers_sweep_numba(u, dx, dt, n_sub, source):
    m = u.shape[0]
    flux = np.empty(m)
    for _ in range(n_sub):
        umax = 0.0
        for i in range(m):
            au = abs(u[i])
            if au > umax:
                umax = au
        if umax > 0.0 and dt > dx / umax:
            return 1
        for i in range(m - 1):
            a = u[i]
            b = u[i + 1]
            fa = a if a > 0.0 else 0.0
            fb = b if b < 0.0 else 0.0
            fa = 0.5 * fa * fa
            fb = 0.5 * fb * fb
            flux[i] = fa if fa > fb else fb
        last = u[m - 1] if u[m - 1] > 0.0 else 0.0
        flux[m - 1] = 0.5 * last * last
        c = dt / dx
        for i in range(m - 1, 0, -1):
            u[i] = u[i] - c * (flux[i] - flux[i - 1]) + dt * source[i]
    return 0


def _burgers_sweep_numpy(u, dx, dt, n_sub, source):
    m = u.shape[0]
    for _ in range(n_sub):
        umax = float(np.abs(u).max())
        if umax > 0.0 and dt > dx / umax:
            return 1
        a = np.maximum(u[:-1], 0.0)
        b = np.minimum(u[1:], 0.0)
        flux = np.maximum(0.5 * a * a, 0.5 * b * b)
        last = max(u[-1], 0.0)
        flux_out = 0.5 * last * last
        full = np.empty(m)
        full[:-1] = flux
        full[-1] = flux_out
        u[1:] = u[1:] - (dt / dx) * (full[1:] - full[:-1]) + dt * source[1:]
    return 0


def burgers_sweep(u, dx, dt, n_sub, source):
    """Advance the solution n_sub substeps in place; 0 on success, 1 on CFL."""
    if numba_enabled():
        return _burgers_sweep_numba(u, dx, dt, n_sub, source)
    return _burgers_sweep_numpy(u, dx, dt, n_sub, source)


# Inverse-distance stencil search ---------------------------------------------
#
# For every query point: the k nearest source points within radius, ordered
# by (distance, source index) so ties resolve deterministically.  Returns
# parallel (n_query, k) arrays of neighbor indices (-1 padding) and squared
# distances.


@njit(cache=True)
def _idw_neighbors_numba(queries, sources, radius2, k):
    nq = queries.shape[0]
    ns = sources.shape[0]
    dim = queries.shape[1]
    idx = np.full((nq, k), -1, dtype=np.int64)
    d2 = np.full((nq, k), np.inf)
    for q in range(nq):
        for s in range(ns):
            dist2 = 0.0
            for c in range(dim):
                diff = queries[q, c] - sources[s, c]
                dist2 += diff * diff
            if dist2 > radius2:
                continue
            # insertion by (distance, index); existing entries win ties
            pos = k
            for j in range(k - 1, -1, -1):
                if dist2 < d2[q, j]:
                    pos = j
                else:
                    break
            if pos < k:
                for j in range(k - 1, pos, -1):
                    d2[q, j] = d2[q, j - 1]
                    idx[q, j] = idx[q, j - 1]
                d2[q, pos] = dist2
                idx[q, pos] = s
    return idx, d2


def _idw_neighbors_numpy(queries, sources, radius2, k):
    # Distances use the same diff-square-accumulate arithmetic as the numba
    # twin so both backends select identical neighbors and weights.
    nq = queries.shape[0]
    idx = np.full((nq, k), -1, dtype=np.int64)
    d2 = np.full((nq, k), np.inf)
    chunk = max(1, 4_000_000 // max(sources.shape[0] * queries.shape[1], 1))
    order_idx = np.arange(sources.shape[0])
    for lo in range(0, nq, chunk):
        block = queries[lo:lo + chunk]
        diff = block[:, None, :] - sources[None, :, :]
        dist2 = np.sum(diff * diff, axis=2)
        for r in range(dist2.shape[0]):
            row = dist2[r]
            ok = np.flatnonzero(row <= radius2)
            if ok.size == 0:
                continue
            sel = ok[np.lexsort((order_idx[ok], row[ok]))][:k]
            idx[lo + r, :sel.size] = sel
            d2[lo + r, :sel.size] = row[sel]
    return idx, d2


def idw_neighbors(queries, sources, radius, k):
    """(indices, squared distances) of the k nearest sources within radius."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    r2 = float(radius) * float(radius)
    if numba_enabled():
        return _idw_neighbors_numba(queries, sources, r2, int(k))
    return _idw_neighbors_numpy(queries, sources, r2, int(k))
