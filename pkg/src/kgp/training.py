"""Hyperparameter estimation by NLML minimization.

All positive quantities (lengthscales, amplitude, noise) live in log space
inside one flat parameter vector alongside the raw feature-map weights.
Gradients are central finite differences of the structured NLML -- no
differentiation through eigendecompositions or the pseudovalue solve -- and
the optimizer is Adam with weight decay applied to the feature-map weight
segments only.

Finite differencing is affordable because a perturbation of one coordinate
only invalidates a single factor's Gram matrix and eigendecomposition; the
other factors are served from a small per-factor cache.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._hooks import perturb_factor
from .errors import NumericalError, ValidationError
from .gappy_gp import (
    DEFAULT_CG_MAXITER,
    DEFAULT_CG_TOL,
    fit_gappy,
    nystrom_logdet,
    reconstruct_full_y,
    solve_pseudovalues,
)
from .grid_gp import LOG_2PI, fit
from .kernels import gram
from .kronalg import EigFactors, eig_factors, kron_matvec

INIT_NOISE_VARIANCE = 5e-3
BEST_TIE_TOL = 1e-12


@dataclass
class TrainConfig:
    """Optimizer settings; defaults follow the product-kernel training recipe."""

    learning_rate: float = 1e-2
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay: float = 2.5e-5
    max_iters: int = 100
    fd_step: float = 1e-5
    seed: int = 0
    eps: float = 1e-8
    cg_tol: float = DEFAULT_CG_TOL
    cg_maxiter: int = DEFAULT_CG_MAXITER
    lr_decay_step: int | None = None
    lr_decay_factor: float = 0.8
    fd_budget: int = 2000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.beta1 <= 0 or self.beta2 <= 0:
            raise ValidationError("optimizer rates must be positive")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")

    def lr_at(self, t):
        if not self.lr_decay_step:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** (t // self.lr_decay_step)


# Parameter vector packing ---------------------------------------------------

@dataclass(frozen=True)
class Segment:
    kind: str  # log_lengthscales | feature_weights | log_outputscale | log_noise
    factor: int | None
    start: int
    stop: int

    @property
    def size(self):
        return self.stop - self.start


@dataclass(frozen=True)
class ParamSchema:
    segments: tuple
    size: int

    def weight_decay_mask(self):
        mask = np.zeros(self.size)
        for s in self.segments:
            if s.kind == "feature_weights":
                mask[s.start:s.stop] = 1.0
        return mask

    def factor_slice(self, factor):
        """Flat index range covering every parameter of one factor."""
        lo = min(s.start for s in self.segments if s.factor == factor)
        hi = max(s.stop for s in self.segments if s.factor == factor)
        return slice(lo, hi)


def pack_params(spec, log_noise):
    """Flatten a kernel spec plus noise into (theta, schema)."""
    chunks, segments, off = [], [], 0

    def push(kind, factor, values):
        nonlocal off
        values = np.asarray(values, dtype=np.float64).ravel()
        segments.append(Segment(kind, factor, off, off + values.size))
        chunks.append(values)
        off += values.size

    for i, fk in enumerate(spec.factors):
        push("log_lengthscales", i, fk.base.log_lengthscales)
        if not fk.fmap.is_identity:
            flat = [w.ravel() for w in fk.fmap.weights]
            flat += [b.ravel() for b in fk.fmap.biases]
            push("feature_weights", i, np.concatenate(flat))
        if i == spec.outputscale_index:
            push("log_outputscale", i, [fk.base.log_outputscale])
    push("log_noise", None, [log_noise])
    theta = np.concatenate(chunks)
    return theta, ParamSchema(tuple(segments), theta.size)


def unpack_params(theta, schema, template_spec):
    """Inverse of pack_params against the same template; returns (spec, sigma2)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != schema.size:
        raise ValidationError(
            f"parameter vector has {theta.size} entries, schema wants {schema.size}"
        )
    spec = template_spec.clone()
    sigma2 = None
    for s in schema.segments:
        vals = theta[s.start:s.stop]
        if s.kind == "log_noise":
            sigma2 = float(np.exp(vals[0]))
            continue
        fk = spec.factors[s.factor]
        if s.kind == "log_lengthscales":
            fk.base.log_lengthscales = vals.copy()
        elif s.kind == "log_outputscale":
            fk.base.log_outputscale = float(vals[0])
        elif s.kind == "feature_weights":
            off = 0
            for j, w in enumerate(fk.fmap.weights):
                fk.fmap.weights[j] = vals[off:off + w.size].reshape(w.shape).copy()
                off += w.size
            for j, b in enumerate(fk.fmap.biases):
                fk.fmap.biases[j] = vals[off:off + b.size].reshape(b.shape).copy()
                off += b.size
    return spec, sigma2


# Problems: the objective over packed parameters ------------------------------

def _nonfinite_objective(value, theta):
    """NumericalError carrying the offending parameter vector."""
    theta = np.asarray(theta)
    err = NumericalError(
        f"NLML is not finite ({value}) at |theta| = {np.linalg.norm(theta):.4g}; "
        f"snapshot attached as .params"
    )
    err.params = theta.copy()
    return err


class _FactorCache:
    """Small cache of per-factor eigendecompositions keyed by parameter bytes."""

    def __init__(self, max_entries=64):
        self.max_entries = max_entries
        self.store = {}

    def get(self, key):
        return self.store.get(key)

    def put(self, key, value):
        if len(self.store) >= self.max_entries:
            self.store.clear()
        self.store[key] = value


class _Problem:
    """Shared machinery: initialization, cached factor eigendecompositions."""

    def __init__(self, spec, grid, y_flat, center):
        self.grid = grid
        self.y_mean = float(y_flat.mean()) if center else 0.0
        self.center = center
        self.template = spec.clone()
        carrier = self.template.factors[self.template.outputscale_index]
        yvar = float((y_flat - self.y_mean).var())
        carrier.base.log_outputscale = math.log(max(yvar, 1e-12))
        self.theta0, self.schema = pack_params(self.template,
                                               math.log(INIT_NOISE_VARIANCE))
        self._cache = _FactorCache()

    def _factor_eigs(self, spec, theta):
        vecs, vals = [], []
        for i, fk in enumerate(spec.factors):
            key = (i, theta[self.schema.factor_slice(i)].tobytes())
            hit = self._cache.get(key)
            if hit is None:
                k = gram(fk, self.grid.axes[i].points)
                if i == 0:
                    k = perturb_factor([k])[0]
                ef = eig_factors([k])
                hit = (ef.eigvecs[0], ef.eigvals[0])
                self._cache.put(key, hit)
            vecs.append(hit[0])
            vals.append(hit[1])
        return EigFactors(tuple(vecs), tuple(vals))

    @property
    def last_cg_iterations(self):
        return 0


class GridProblem(_Problem):
    """Rectilinear training problem: objective is the exact structured NLML."""

    def __init__(self, spec, grid, y, center=True):
        spec.check_grid(grid)
        y = grid.check_field(y)
        super().__init__(spec, grid, y.ravel(), center)
        self.y = y - self.y_mean

    def objective(self, theta, update_warm=False):
        spec, sigma2 = unpack_params(theta, self.schema, self.template)
        eig = self._factor_eigs(spec, theta)
        w = kron_matvec([u.T for u in eig.eigvecs], self.y)
        g = eig.eig_tensor() + sigma2
        if g.min() <= 0:
            raise NumericalError(
                f"shifted eigenvalue tensor not positive (min {g.min():.6e})"
            )
        quad = float(np.sum(w * w / g))
        logdet = float(np.log(g).sum())
        value = 0.5 * quad + 0.5 * logdet + 0.5 * self.grid.n_total * LOG_2PI
        if not np.isfinite(value):
            raise _nonfinite_objective(value, theta)
        return value

    def finalize(self, theta):
        spec, sigma2 = unpack_params(theta, self.schema, self.template)
        model = fit(spec, self.grid, self.y, sigma2, center=False)
        model.y_mean = self.y_mean
        return model


class GappyProblem(_Problem):
    """Gappy training problem: exact quadratic term, approximate log-det.

    The pseudovalue CG warm-starts from the last accepted iterate's
    solution; finite-difference probes reuse that warm start without
    overwriting it (the perturbed systems are near-identical, so the
    previous solution is an excellent initial guess).
    """

    def __init__(self, spec, grid, mask, y_r, center=True,
                 cg_tol=DEFAULT_CG_TOL, cg_maxiter=DEFAULT_CG_MAXITER):
        spec.check_grid(grid)
        y_r = np.asarray(y_r, dtype=np.float64).ravel()
        super().__init__(spec, grid, y_r, center)
        self.mask = mask
        self.y_r = y_r - self.y_mean
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        self._warm = None
        self._last_cg = 0

    def objective(self, theta, update_warm=False):
        spec, sigma2 = unpack_params(theta, self.schema, self.template)
        eig = self._factor_eigs(spec, theta)
        pseudo = solve_pseudovalues(spec, self.grid, self.mask, self.y_r, sigma2,
                                    cg_tol=self.cg_tol, cg_maxiter=self.cg_maxiter,
                                    warm_start=self._warm, eig=eig)
        self._last_cg = pseudo.cg_iterations
        if update_warm and pseudo.y_g.size:
            self._warm = pseudo.y_g
        y_full = reconstruct_full_y(self.grid, self.mask, self.y_r, pseudo)
        w = kron_matvec([u.T for u in eig.eigvecs], y_full)
        g = eig.eig_tensor() + sigma2
        if g.min() <= 0:
            raise NumericalError(
                f"shifted eigenvalue tensor not positive (min {g.min():.6e})"
            )
        quad = float(np.sum(w * w / g))
        n_r = self.grid.n_param * self.mask.n_regular * self.grid.n_time
        logdet = nystrom_logdet(eig, sigma2, n_r, self.mask.n_regular, self.mask.m)
        value = 0.5 * quad + 0.5 * logdet + 0.5 * n_r * LOG_2PI
        if not np.isfinite(value):
            raise _nonfinite_objective(value, theta)
        return value

    @property
    def last_cg_iterations(self):
        return self._last_cg

    def finalize(self, theta):
        spec, sigma2 = unpack_params(theta, self.schema, self.template)
        model = fit_gappy(spec, self.grid, self.mask, self.y_r, sigma2,
                          cg_tol=self.cg_tol, cg_maxiter=self.cg_maxiter,
                          warm_start=self._warm, center=False)
        model.fitted.y_mean = self.y_mean
        return model


# Gradients and the optimizer -------------------------------------------------

def grad_fd(objective, theta, fd_step=1e-5):
    """Central finite differences, one coordinate at a time."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += fd_step
        dn[i] -= fd_step
        f_up = objective(up)
        f_dn = objective(dn)
        if not (np.isfinite(f_up) and np.isfinite(f_dn)):
            raise NumericalError(f"objective non-finite at FD probe of component {i}")
        grad[i] = (f_up - f_dn) / (2.0 * fd_step)
    return grad


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, params):
        params = np.asarray(params, dtype=np.float64).copy()
        return cls(params, np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state, grad, config, wd_mask=None):
    """One Adam update with bias correction.

    Weight decay is added to the gradient before the moment updates
    (coupled style), restricted to the entries selected by ``wd_mask``.
    """
    g = np.asarray(grad, dtype=np.float64)
    if wd_mask is not None and config.weight_decay:
        g = g + config.weight_decay * wd_mask * state.params
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    lr = config.lr_at(state.t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return AdamState(params, m, v, t)


@dataclass
class TrainTrace:
    """Per-iteration log: NLML, gradient norm, wall seconds, CG iterations."""

    rows: list = field(default_factory=list)

    def append(self, iteration, nlml, grad_norm, seconds, cg_iters):
        self.rows.append((int(iteration), float(nlml), float(grad_norm),
                          float(seconds), int(cg_iters)))

    def nlmls(self):
        return np.array([r[1] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,nlml,grad_norm,seconds,cg_iters\n")
            for it, nlml, gn, sec, cg in self.rows:
                gn_s = "" if np.isnan(gn) else f"{gn:.10g}"
                fh.write(f"{it},{nlml:.12g},{gn_s},{sec:.6f},{cg}\n")


class TrainingAborted(NumericalError):
    """Raised after three consecutive non-finite objectives; carries the trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def train(problem, config):
    """Minimize the NLML with Adam; return the best iterate, never a worse one.

    The returned model corresponds to the lowest NLML seen (the earliest
    iterate wins ties within 1e-12), so the result can only improve on the
    initialization.
    """
    wd_mask = problem.schema.weight_decay_mask()
    if problem.theta0.size > config.fd_budget:
        raise ValidationError(
            f"{problem.theta0.size} parameters exceed the finite-difference "
            f"budget {config.fd_budget}"
        )
    trace = TrainTrace()
    state = AdamState.init(problem.theta0)
    t0 = time.perf_counter()
    nlml = problem.objective(state.params, update_warm=True)
    trace.append(0, nlml, np.nan, time.perf_counter() - t0, problem.last_cg_iterations)
    best_nlml, best_theta, bad_streak = nlml, state.params.copy(), 0
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        try:
            g = grad_fd(problem.objective, state.params, config.fd_step)
            state = adam_step(state, g, config, wd_mask)
            nlml = problem.objective(state.params, update_warm=True)
            if not np.isfinite(nlml):
                raise NumericalError("non-finite NLML")
        except NumericalError:
            bad_streak += 1
            trace.append(it, np.inf, np.nan, time.perf_counter() - t0,
                         problem.last_cg_iterations)
            if bad_streak >= 3:
                raise TrainingAborted(
                    f"three consecutive non-finite objectives at iteration {it}",
                    trace,
                )
            # back off: restart the moment state from the best point seen
            state = AdamState.init(best_theta)
            continue
        bad_streak = 0
        trace.append(it, nlml, float(np.linalg.norm(g)),
                     time.perf_counter() - t0, problem.last_cg_iterations)
        if nlml < best_nlml - BEST_TIE_TOL:
            best_nlml, best_theta = nlml, state.params.copy()
    model = problem.finalize(best_theta)
    return model, trace
