"""Desk-scale data generation and preprocessing.

Covers the full pipeline feeding the GP models: a shock-capturing 1D
Burgers solver for parametrized snapshots, embedding of scattered samples
onto a background lattice with gap detection, analytic reference-domain
maps, parameter-space PCA, and the relative error metric used everywhere
results are reported.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from ._accel import burgers_sweep, idw_neighbors
from .errors import NumericalError, ValidationError
from .gappy_gp import GappyMask

MU1_RANGE = (4.25, 5.50)
MU2_RANGE = (0.015, 0.03)
MAX_CFL_HALVINGS = 10


@dataclass
class BurgersConfig:
    """Inviscid Burgers setup: inflow mu1, source growth rate mu2.

    The PDE is u_t + (u^2/2)_x = 0.02 exp(mu2 x) on [0, x_max] with
    u(x, 0) = 1 and u(0, t) = mu1.  Snapshots are sampled on m_spatial
    uniform nodes (including x = 0) at n_time uniform output times
    (including t = 0).
    """

    mu1: float
    mu2: float
    m_spatial: int = 128
    n_time: int = 100
    t_final: float = 35.0
    x_max: float = 100.0
    dt: float | None = None

    def __post_init__(self):
        if not MU1_RANGE[0] <= self.mu1 <= MU1_RANGE[1]:
            raise ValidationError(
                f"mu1={self.mu1} outside {list(MU1_RANGE)}"
            )
        if not MU2_RANGE[0] <= self.mu2 <= MU2_RANGE[1]:
            raise ValidationError(
                f"mu2={self.mu2} outside {list(MU2_RANGE)}"
            )
        if self.m_spatial < 2 or self.n_time < 2:
            raise ValidationError("need at least 2 spatial nodes and 2 output times")
        if self.t_final <= 0 or self.x_max <= 0:
            raise ValidationError("t_final and x_max must be positive")

    @property
    def x(self):
        return np.linspace(0.0, self.x_max, self.m_spatial)

    @property
    def times(self):
        if self.dt is None:
            return np.linspace(0.0, self.t_final, self.n_time)
        return np.arange(self.n_time) * self.dt


def burgers_solve(cfg: BurgersConfig):
    """First-order Godunov finite-volume solution, (m_spatial, n_time).

    Marches each output interval in equal substeps; whenever the CFL
    condition dt <= dx/max|u| fails mid-interval the interval restarts from
    a checkpoint with the step halved (at most 10 halvings).  Column 0 is
    the initial condition; the inflow node holds mu1 for t > 0.
    """
    x = cfg.x
    dx = x[1] - x[0]
    source = 0.02 * np.exp(cfg.mu2 * x)
    times = cfg.times
    out = np.empty((cfg.m_spatial, times.size))
    u = np.ones(cfg.m_spatial)
    out[:, 0] = u
    u[0] = cfg.mu1
    for j in range(1, times.size):
        span = times[j] - times[j - 1]
        checkpoint = u.copy()
        halvings = 0
        while True:
            n_sub = 2 ** halvings
            status = burgers_sweep(u, dx, span / n_sub, n_sub, source)
            if status == 0:
                break
            halvings += 1
            if halvings > MAX_CFL_HALVINGS:
                raise NumericalError(
                    f"CFL violated after {MAX_CFL_HALVINGS} halvings at "
                    f"t={times[j]:.4f} (dx={dx:.4e})"
                )
            u[:] = checkpoint
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"solution blew up before t={times[j]:.4f}")
        out[:, j] = u
    return out


def sobol_parameters(n, seed, mu1_range=MU1_RANGE, mu2_range=MU2_RANGE):
    """Low-discrepancy parameter designs over the Burgers box."""
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # n need not be 2^k
        unit = sampler.random(n)
    lo = np.array([mu1_range[0], mu2_range[0]])
    hi = np.array([mu1_range[1], mu2_range[1]])
    return lo + unit * (hi - lo)


def burgers_dataset(params, m_spatial=128, n_time=100, t_final=35.0, x_max=100.0):
    """Solve one snapshot per parameter row; returns (N, M, Nt) stacked fields."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    fields = np.empty((params.shape[0], m_spatial, n_time))
    for i, (mu1, mu2) in enumerate(params):
        cfg = BurgersConfig(mu1=float(mu1), mu2=float(mu2), m_spatial=m_spatial,
                            n_time=n_time, t_final=t_final, x_max=x_max)
        fields[i] = burgers_solve(cfg)
    return fields


# Scattered data and lattice embedding ----------------------------------------

@dataclass
class ScatteredSnapshot:
    """Point cloud with one scalar value per point."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.points.shape[0] != self.values.size:
            raise ValidationError(
                f"{self.points.shape[0]} points but {self.values.size} values"
            )
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.values))):
            raise ValidationError("scattered snapshot contains non-finite entries")


class EmbeddedField(NamedTuple):
    values: np.ndarray  # lattice-shaped, NaN at gaps
    mask: GappyMask


IDW_NEIGHBORS = 4
IDW_POWER = 2


def embed_to_lattice(snap, lattice_axes, stencil_radius):
    """Transfer scattered samples onto a rectilinear lattice.

    Inverse-distance weighting (power 2) over the 4 nearest sources within
    ``stencil_radius``; lattice points with no source in range become gaps.
    A source sitting exactly on a lattice point is copied through; all ties
    break toward the lowest source index.
    """
    axes = [np.asarray(a, dtype=np.float64).ravel() for a in lattice_axes]
    shape = tuple(a.size for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice = np.stack([m.ravel() for m in mesh], axis=1)
    if snap.points.shape[1] != lattice.shape[1]:
        raise ValidationError(
            f"snapshot dimension {snap.points.shape[1]} does not match "
            f"lattice dimension {lattice.shape[1]}"
        )
    if stencil_radius <= 0:
        raise ValidationError("stencil_radius must be positive")
    idx, d2 = idw_neighbors(lattice, snap.points, stencil_radius, IDW_NEIGHBORS)
    span = snap.points.max(axis=0) - snap.points.min(axis=0)
    exact2 = (1e-12 * max(float(np.linalg.norm(span)), 1.0)) ** 2

    values = np.full(lattice.shape[0], np.nan)
    regular = np.zeros(lattice.shape[0], dtype=bool)
    for i in range(lattice.shape[0]):
        nn = idx[i]
        if nn[0] < 0:
            continue
        regular[i] = True
        if d2[i, 0] <= exact2:
            values[i] = snap.values[nn[0]]
            continue
        valid = nn >= 0
        w = 1.0 / d2[i, valid] ** (IDW_POWER / 2)
        values[i] = float(np.sum(w * snap.values[nn[valid]]) / np.sum(w))
    if not regular.any():
        raise ValidationError(
            "no lattice point has a source sample within the stencil radius"
        )
    mask = GappyMask.from_bool_field(regular.reshape(shape))
    return EmbeddedField(values.reshape(shape), mask)


# Analytic reference-domain maps ----------------------------------------------

TWO_PI = 2.0 * np.pi


@dataclass
class AnalyticMap:
    """Invertible coordinate map onto a fixed reference domain.

    ``affine``: x -> A x + b.  ``annulus``: maps the ring
    r_inner <= |x| <= r_outer to the unit square, angle (normalized to
    [0, 1)) first, radius second; the point (r_inner, angle 0) lands on the
    (0, 0) corner.
    """

    kind: str
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    r_inner: float = 1.0
    r_outer: float = 2.0

    def __post_init__(self):
        if self.kind not in ("affine", "annulus"):
            raise ValidationError(f"unknown map kind {self.kind!r}")
        if self.kind == "affine":
            self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
            d = self.matrix.shape[0]
            if self.matrix.shape != (d, d):
                raise ValidationError("affine matrix must be square")
            if abs(np.linalg.det(self.matrix)) < 1e-14:
                raise ValidationError("affine matrix is singular")
            if self.offset is None:
                self.offset = np.zeros(d)
            self.offset = np.asarray(self.offset, dtype=np.float64).ravel()
        else:
            if not 0 < self.r_inner < self.r_outer:
                raise ValidationError("annulus needs 0 < r_inner < r_outer")

    def forward(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "affine":
            return points @ self.matrix.T + self.offset
        r = np.hypot(points[:, 0], points[:, 1])
        bad = np.flatnonzero((r < self.r_inner * (1 - 1e-9))
                             | (r > self.r_outer * (1 + 1e-9)))
        if bad.size:
            raise ValidationError(
                f"{bad.size} points outside the annulus, first indices "
                f"{bad[:5].tolist()}"
            )
        theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
        u = theta / TWO_PI
        v = (r - self.r_inner) / (self.r_outer - self.r_inner)
        return np.stack([u, v], axis=1)

    def inverse(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "affine":
            return np.linalg.solve(
                self.matrix, (points - self.offset).T
            ).T
        u, v = points[:, 0], points[:, 1]
        bad = np.flatnonzero((u < -1e-9) | (u > 1 + 1e-9)
                             | (v < -1e-9) | (v > 1 + 1e-9))
        if bad.size:
            raise ValidationError(
                f"{bad.size} points outside the unit square, first indices "
                f"{bad[:5].tolist()}"
            )
        r = self.r_inner + v * (self.r_outer - self.r_inner)
        theta = u * TWO_PI
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def apply_map(amap, snap, direction="forward"):
    """Transform snapshot coordinates; values ride along unchanged."""
    if direction not in ("forward", "inverse"):
        raise ValidationError(f"direction must be forward or inverse, got {direction!r}")
    fn = amap.forward if direction == "forward" else amap.inverse
    return ScatteredSnapshot(fn(snap.points), snap.values.copy())


# Parameter reduction and metrics ----------------------------------------------

class PcaResult(NamedTuple):
    basis: np.ndarray            # (k, p) rows are components
    coefficients: np.ndarray     # (n, k) projections of the centered samples
    explained_variance: np.ndarray  # per-component, singular values^2 / n
    mean: np.ndarray             # column means removed before the SVD


def pca_reduce(samples, k):
    """Centered SVD-based principal component analysis."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, p = samples.shape
    if not 1 <= k <= min(n, p):
        raise ValidationError(f"k={k} not in [1, min(n,p)={min(n, p)}]")
    mean = samples.mean(axis=0)
    centered = samples - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:k]
    coefficients = u[:, :k] * s[:k]
    explained = (s * s) / n
    return PcaResult(basis, coefficients, explained[:k], mean)


def relative_error(truth, pred):
    """l2 norm of the error over the l2 norm of the truth."""
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.size != pred.size:
        raise ValidationError(
            f"length mismatch: truth {truth.size}, prediction {pred.size}"
        )
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ValidationError("relative error undefined for zero-norm truth")
    return float(np.linalg.norm(truth - pred)) / denom


# Synthetic gappy fields --------------------------------------------------------

def synthetic_gappy_field(nx=12, ny=12, n_param=3, n_time=4, hole_radius=0.25,
                          seed=0):
    """Smooth analytic field on a 2D lattice with a circular hole of gaps.

    Returns (params, axes, times, values, mask) where values is the
    (N, nx, ny, Nt) field tensor with NaN inside the hole.
    """
    rng = np.random.default_rng(seed)
    params = rng.uniform(0.5, 1.5, size=(n_param, 2))
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    ts = np.linspace(0.0, 1.0, n_time)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    hole = (xg - 0.5) ** 2 + (yg - 0.5) ** 2 < hole_radius ** 2
    mask = GappyMask.from_bool_field(~hole)
    values = np.empty((n_param, nx, ny, n_time))
    for i, (a, b) in enumerate(params):
        for j, t in enumerate(ts):
            values[i, :, :, j] = (
                a * np.sin(np.pi * xg) * np.cos(np.pi * yg * b)
                + 0.5 * np.exp(-t) * xg * yg
            )
    values[:, hole, :] = np.nan
    return params, (xs, ys), ts, values, mask
