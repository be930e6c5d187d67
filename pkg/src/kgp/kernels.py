"""Stationary base kernels, small feed-forward feature maps, and the
per-axis product kernel they compose into.

Each grid axis gets one factor kernel: a feature map G (possibly the
identity) followed by a stationary base kernel on the latent space,

    k_factor(a, b) = k_base(G(a), G(b)).

The product over axes of these factors is the full covariance, which on a
product grid becomes a Kronecker product of the per-axis Gram matrices.

Kernel conventions: the squared-exponential is exp(-||(u - u')/l||^2)
with no 1/2 in the exponent; Matern-5/2 is (1 + sqrt5 r + 5r^2/3) exp(-sqrt5 r)
with r the lengthscale-weighted latent distance.  Positive hyperparameters
are stored as logs so optimizers can work unconstrained.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .grids import ProductGrid
from .kronalg import KronOperator

FAMILIES = ("se", "matern52")
ACTIVATIONS = ("relu", "tanh", "identity")

SQRT5 = np.sqrt(5.0)


@dataclass
class BaseKernel:
    """Stationary kernel with per-latent-dimension lengthscales.

    ``log_outputscale`` is only trainable on the single factor that carries
    the product's amplitude; all other factors keep it frozen at 0.
    """

    family: str
    log_lengthscales: np.ndarray
    log_outputscale: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=np.float64)
        )

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def outputscale(self):
        return float(np.exp(self.log_outputscale))


@dataclass
class FeatureMap:
    """Small fully connected network lifting an axis coordinate to a latent space.

    Zero layers means the identity map (input passed through untouched, no
    normalization).  Non-identity maps first rescale inputs to [-1, 1] using
    the training range stored in ``input_lo``/``input_hi``; raw coordinates
    like x in [0, 100] would otherwise saturate a small network.
    """

    layer_sizes: tuple
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    activation: str = "tanh"
    input_lo: np.ndarray | None = None
    input_hi: np.ndarray | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if len(self.layer_sizes) == 1:
            if self.weights or self.biases:
                raise ValidationError("identity map cannot carry weights")
        else:
            expected = len(self.layer_sizes) - 1
            if len(self.weights) != expected or len(self.biases) != expected:
                raise ValidationError(
                    f"feature map with sizes {self.layer_sizes} needs "
                    f"{expected} weight/bias pairs"
                )

    @property
    def is_identity(self):
        return len(self.layer_sizes) == 1

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def identity_map(dim):
    return FeatureMap(layer_sizes=(dim,))


def init_feature_map(layer_sizes, activation, rng, input_lo=None, input_hi=None):
    """Glorot-uniform weights, zero biases, from the supplied generator."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return FeatureMap(layer_sizes, weights, biases, activation,
                      input_lo=input_lo, input_hi=input_hi)


def _activate(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def feature_forward(fmap, points):
    """Deterministic forward pass; identity maps return the input unchanged."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[1] != fmap.in_dim:
        raise ValidationError(
            f"points have dimension {points.shape[1]}, feature map expects {fmap.in_dim}"
        )
    if fmap.is_identity:
        return points
    z = points
    if fmap.input_lo is not None:
        lo = np.asarray(fmap.input_lo, dtype=np.float64)
        hi = np.asarray(fmap.input_hi, dtype=np.float64)
        span = np.where(hi > lo, hi - lo, 1.0)
        z = 2.0 * (z - lo) / span - 1.0
    last = len(fmap.weights) - 1
    for i, (w, b) in enumerate(zip(fmap.weights, fmap.biases)):
        z = z @ w + b
        if i < last:
            z = _activate(z, fmap.activation)
    if not np.all(np.isfinite(z)):
        raise NumericalError("feature map produced non-finite output (weights diverged)")
    return z


@dataclass
class FactorKernel:
    """One product-kernel factor: feature map composed with a base kernel."""

    fmap: FeatureMap
    base: BaseKernel

    def __post_init__(self):
        if self.fmap.out_dim != self.base.log_lengthscales.size:
            raise ValidationError(
                f"feature map output dim {self.fmap.out_dim} does not match "
                f"{self.base.log_lengthscales.size} lengthscales"
            )

    def latent(self, points):
        return feature_forward(self.fmap, points)


def gram(fk, a, b=None):
    """Gram matrix k(G(a_i), G(b_j)); symmetric when b is omitted.

    The symmetric case symmetrizes explicitly so downstream
    eigendecompositions never see BLAS rounding asymmetry.
    """
    symmetric = b is None
    za = fk.latent(a)
    zb = za if symmetric else fk.latent(b)
    inv_l = 1.0 / fk.base.lengthscales
    xa = za * inv_l
    xb = xa if symmetric else zb * inv_l
    sq = np.maximum(
        np.sum(xa * xa, axis=1)[:, None]
        + np.sum(xb * xb, axis=1)[None, :]
        - 2.0 * (xa @ xb.T),
        0.0,
    )
    if fk.base.family == "se":
        k = np.exp(-sq)
    else:
        r = np.sqrt(sq)
        k = (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-SQRT5 * r)
    k *= fk.base.outputscale
    if symmetric:
        k = 0.5 * (k + k.T)
    return k


@dataclass
class ProductKernelSpec:
    """Ordered factor kernels aligned with the axes of a product grid.

    Exactly one factor (by convention the parameter factor) carries the free
    outputscale; a product of per-factor amplitudes is not identifiable.
    """

    factors: list
    outputscale_index: int = 0

    def __post_init__(self):
        if not self.factors:
            raise ValidationError("spec needs at least one factor kernel")
        if not 0 <= self.outputscale_index < len(self.factors):
            raise ValidationError("outputscale_index out of range")
        for i, fk in enumerate(self.factors):
            if i != self.outputscale_index and fk.base.log_outputscale != 0.0:
                raise ValidationError(
                    f"factor {i} carries an amplitude but only factor "
                    f"{self.outputscale_index} may (a product of per-factor "
                    f"amplitudes is not identifiable)"
                )

    def __len__(self):
        return len(self.factors)

    def clone(self):
        return copy.deepcopy(self)

    def check_grid(self, grid: ProductGrid):
        if len(self.factors) != len(grid.axes):
            raise ValidationError(
                f"spec has {len(self.factors)} factors but grid has "
                f"{len(grid.axes)} axes"
            )
        for i, (fk, ax) in enumerate(zip(self.factors, grid.axes)):
            if fk.fmap.in_dim != ax.dim:
                raise ValidationError(
                    f"factor {i} expects inputs of dimension {fk.fmap.in_dim}, "
                    f"axis provides {ax.dim}"
                )

    def kernel_value(self, z1, z2, axis_dims):
        """Pointwise product kernel on stacked inputs (oracle-side helper)."""
        z1 = np.atleast_1d(np.asarray(z1, dtype=np.float64))
        z2 = np.atleast_1d(np.asarray(z2, dtype=np.float64))
        out, off = 1.0, 0
        for fk, d in zip(self.factors, axis_dims):
            a = z1[off:off + d][None, :]
            b = z2[off:off + d][None, :]
            out *= gram(fk, a, b)[0, 0]
            off += d
        return out


def product_covariance(spec, grid):
    """Per-axis Gram factors whose Kronecker product is the full covariance."""
    spec.check_grid(grid)
    factors = [gram(fk, ax.points) for fk, ax in zip(spec.factors, grid.axes)]
    from ._hooks import perturb_factor  # deferred: test hook, zero cost when off

    return KronOperator(perturb_factor(factors))


def cross_covariance(spec, train_grid, test_grid):
    """Rectangular cross-covariance factors, test rows by training columns."""
    spec.check_grid(train_grid)
    spec.check_grid(test_grid)
    factors = [
        gram(fk, test_ax.points, train_ax.points)
        for fk, train_ax, test_ax in zip(spec.factors, train_grid.axes, test_grid.axes)
    ]
    return KronOperator(factors)


def prior_variance(spec, test_grid):
    """diag of the test covariance via diag(A (x) B) = diag(A) (x) diag(B).

    Stationary base kernels make each factor diagonal a constant equal to
    that factor's amplitude.
    """
    spec.check_grid(test_grid)
    diags = [np.full(ax.size, fk.base.outputscale)
             for fk, ax in zip(spec.factors, test_grid.axes)]
    g = diags[0]
    for d in diags[1:]:
        g = g[..., None] * d
    return g


def default_spec_for_grid(grid, family="matern52", widths=(16, 16), latent_dim=2,
                          activation="relu", seed=0, deep=True):
    """Build a product-kernel spec sized to a grid.

    ``deep=False`` gives identity maps (a plain stationary product kernel).
    Deep factors get ``in_dim -> widths... -> latent_dim`` networks, except
    the parameter factor whose latent dimension equals the parameter
    dimension.  Initial lengthscales are half the per-dimension range of
    what each base kernel actually sees (raw coordinates for identity maps,
    latent outputs for networks).
    """
    rng = np.random.default_rng(seed)
    factors = []
    for ax in grid.axes:
        if deep:
            out_dim = ax.dim if ax.role == "parameter" else latent_dim
            lo = ax.points.min(axis=0)
            hi = ax.points.max(axis=0)
            fmap = init_feature_map((ax.dim, *widths, out_dim), activation, rng,
                                    input_lo=lo, input_hi=hi)
        else:
            fmap = identity_map(ax.dim)
        latent = feature_forward(fmap, ax.points)
        span = latent.max(axis=0) - latent.min(axis=0)
        ls = np.maximum(0.5 * span, 1e-3)
        base = BaseKernel(family, np.log(ls))
        factors.append(FactorKernel(fmap, base))
    return ProductKernelSpec(factors, outputscale_index=0)


# JSON (de)serialization used by the run-config machinery ------------------

def feature_map_to_config(fmap):
    if fmap.is_identity:
        return {"layer_sizes": list(fmap.layer_sizes)}
    return {
        "layer_sizes": list(fmap.layer_sizes),
        "weights": [w.tolist() for w in fmap.weights],
        "biases": [b.tolist() for b in fmap.biases],
        "activation": fmap.activation,
        "input_lo": None if fmap.input_lo is None else np.asarray(fmap.input_lo).tolist(),
        "input_hi": None if fmap.input_hi is None else np.asarray(fmap.input_hi).tolist(),
    }


def feature_map_from_config(cfg):
    sizes = tuple(cfg["layer_sizes"])
    if len(sizes) == 1:
        return FeatureMap(layer_sizes=sizes)
    lo = cfg.get("input_lo")
    hi = cfg.get("input_hi")
    return FeatureMap(
        layer_sizes=sizes,
        weights=[np.asarray(w, dtype=np.float64) for w in cfg["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in cfg["biases"]],
        activation=cfg.get("activation", "tanh"),
        input_lo=None if lo is None else np.asarray(lo, dtype=np.float64),
        input_hi=None if hi is None else np.asarray(hi, dtype=np.float64),
    )


def spec_to_config(spec):
    return {
        "outputscale_index": spec.outputscale_index,
        "factors": [
            {
                "family": fk.base.family,
                "log_lengthscales": fk.base.log_lengthscales.tolist(),
                "log_outputscale": fk.base.log_outputscale,
                "feature_map": feature_map_to_config(fk.fmap),
            }
            for fk in spec.factors
        ],
    }


def spec_from_config(cfg):
    factors = []
    for f in cfg["factors"]:
        base = BaseKernel(f["family"], np.asarray(f["log_lengthscales"]),
                          f.get("log_outputscale", 0.0))
        factors.append(FactorKernel(feature_map_from_config(f["feature_map"]), base))
    return ProductKernelSpec(factors, outputscale_index=cfg.get("outputscale_index", 0))
