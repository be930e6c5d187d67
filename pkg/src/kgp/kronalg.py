"""Kronecker and tensor algebra kernel.

Everything in this package that touches a covariance matrix of the form
``K = K_1 (x) K_2 (x) ... (x) K_k`` goes through this module.  The full
matrix is never formed: a Kronecker matrix-vector product is a sequence of
mode-wise tensor-matrix multiplications, and solves/determinants reduce to
per-factor symmetric eigendecompositions.

Layout convention (load-bearing, used by every caller): field tensors are
row-major (C-order) ndarrays whose axes follow the factor order
``(parameter, x_1, ..., x_d, time)``.  With that convention

    (A_1 (x) ... (x) A_k) vec(X) == vec(X  x_1 A_1  x_2 A_2 ... x_k A_k)

where ``vec`` is C-order raveling and ``x_i`` is the mode-i product.
Factors of size 1 are legal and act as scalar multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError

# Dense materialization guard: kron() of the factors is refused above this
# many rows unless the caller explicitly raises the limit.
DENSE_LIMIT = 4096

# Relative asymmetry allowed before a matrix is rejected as non-symmetric.
SYMMETRY_RTOL = 1e-12


def _as_matrix(a, idx):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"factor {idx} is not a matrix (ndim={a.ndim})")
    return a


@dataclass(frozen=True, init=False)
class KronOperator:
    """Ordered list of dense factor matrices, composed by Kronecker product.

    Factors may be rectangular (cross-covariance blocks).  The implied full
    operator has shape (prod of factor rows, prod of factor cols).
    """

    factors: tuple

    def __init__(self, factors):
        mats = tuple(_as_matrix(a, i) for i, a in enumerate(factors))
        if not mats:
            raise ValidationError("KronOperator needs at least one factor")
        object.__setattr__(self, "factors", mats)

    @property
    def shape(self):
        rows = int(np.prod([a.shape[0] for a in self.factors]))
        cols = int(np.prod([a.shape[1] for a in self.factors]))
        return (rows, cols)

    @property
    def row_shape(self):
        return tuple(a.shape[0] for a in self.factors)

    @property
    def col_shape(self):
        return tuple(a.shape[1] for a in self.factors)

    def matvec(self, v):
        return kron_matvec(self.factors, v)

    def dense(self, limit=DENSE_LIMIT):
        """Materialize the full Kronecker product (tests/oracles only)."""
        rows = self.shape[0]
        if rows > limit:
            raise ValidationError(
                f"refusing to densify {rows} rows (limit {limit})"
            )
        out = self.factors[0]
        for a in self.factors[1:]:
            out = np.kron(out, a)
        return out


@dataclass(frozen=True)
class EigFactors:
    """Per-factor symmetric eigendecompositions K_i = U_i diag(d_i) U_i^T.

    Eigenvalues are stored in descending order per factor.  The eigenvalue
    tensor of the composed operator is the outer product of the per-factor
    eigenvalue vectors.
    """

    eigvecs: tuple
    eigvals: tuple

    @property
    def shape(self):
        return tuple(d.size for d in self.eigvals)

    @property
    def n(self):
        return int(np.prod(self.shape))

    def eig_tensor(self):
        """Outer product of per-factor eigenvalues: all composed eigenvalues."""
        g = self.eigvals[0]
        for d in self.eigvals[1:]:
            g = g[..., None] * d
        return g

    def lambda_max(self):
        """Largest composed eigenvalue (product of per-factor maxima)."""
        return float(np.prod([d[0] for d in self.eigvals]))


def kron_matvec(factors, v):
    """Apply (A_1 (x) ... (x) A_k) to a field tensor without densifying.

    ``v`` must have shape equal to the factor column sizes in order; the
    result has the factor row sizes.  Cost is sum_i m_i * n_i * prod_{j!=i}.
    """
    factors = [np.asarray(a, dtype=np.float64) for a in factors]
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != len(factors):
        raise DimensionError(
            f"tensor has {v.ndim} axes but operator has {len(factors)} factors"
        )
    for i, a in enumerate(factors):
        if a.shape[1] != v.shape[i]:
            raise DimensionError(
                f"factor {i}: {a.shape[0]}x{a.shape[1]} does not conform "
                f"with tensor axis of size {v.shape[i]}"
            )
    out = v
    for i, a in enumerate(factors):
        out = np.tensordot(a, out, axes=([1], [i]))
        out = np.moveaxis(out, 0, i)
    return np.ascontiguousarray(out)


def check_symmetric(a, idx=0, rtol=SYMMETRY_RTOL):
    """Raise unless ``a`` is square and symmetric to relative tolerance."""
    a = _as_matrix(a, idx)
    if a.shape[0] != a.shape[1]:
        raise ValidationError(
            f"factor {idx} is {a.shape[0]}x{a.shape[1]}, expected square"
        )
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > rtol * scale:
        raise ValidationError(
            f"factor {idx} is not symmetric "
            f"(max asymmetry {np.abs(a - a.T).max():.3e}, scale {scale:.3e})"
        )
    return a


def eig_factors(op, jitter=0.0):
    """Eigendecompose every factor of a symmetric Kronecker operator.

    ``jitter`` (scalar or per-factor sequence, >= 0) is added to each factor
    diagonal before decomposition; the returned eigenvalues therefore belong
    to the jittered factors.  Eigenvalues come out in descending order.
    """
    factors = op.factors if isinstance(op, KronOperator) else tuple(op)
    jit = np.broadcast_to(np.asarray(jitter, dtype=np.float64), (len(factors),))
    if np.any(jit < 0):
        raise ValidationError("jitter must be >= 0")
    eigvecs, eigvals = [], []
    for i, a in enumerate(factors):
        a = check_symmetric(a, i)
        if jit[i] > 0:
            a = a + jit[i] * np.eye(a.shape[0])
        try:
            d, u = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed on factor {i}: {exc}")
        order = np.argsort(d)[::-1]
        eigvals.append(np.ascontiguousarray(d[order]))
        eigvecs.append(np.ascontiguousarray(u[:, order]))
    return EigFactors(tuple(eigvecs), tuple(eigvals))


def inverse_apply(eig, sigma2, v):
    """Apply (K + sigma2*I)^-1 to a field tensor via the eigenbasis.

    Computes U (Lambda + sigma2)^-1 U^T v with every product done as a
    mode multiplication; never forms the composed matrix.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be > 0, got {sigma2}")
    w = kron_matvec([u.T for u in eig.eigvecs], v)
    g = eig.eig_tensor() + sigma2
    if g.min() <= 0:
        raise NumericalError(
            f"shifted eigenvalue tensor not positive "
            f"(min composed eigenvalue {eig.eig_tensor().min():.6e}, sigma2 {sigma2})"
        )
    w = w / g
    return kron_matvec(eig.eigvecs, w)


def logdet_from_eigs(eig, sigma2):
    """log|K + sigma2*I| as a sum of logs over the composed eigenvalues.

    Never the raw product: the determinant itself overflows for more than
    a few thousand points.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be > 0, got {sigma2}")
    g = eig.eig_tensor() + sigma2
    gmin = g.min()
    if gmin <= 0:
        raise NumericalError(
            f"cannot take log of non-positive shifted eigenvalue "
            f"(min composed eigenvalue {eig.eig_tensor().min():.6e}, sigma2 {sigma2})"
        )
    return float(np.log(g).sum())


def kron_diag(op):
    """Diagonal of a square Kronecker product via diag(A(x)B)=diag(A)(x)diag(B)."""
    factors = op.factors if isinstance(op, KronOperator) else tuple(op)
    diags = []
    for i, a in enumerate(factors):
        a = _as_matrix(a, i)
        if a.shape[0] != a.shape[1]:
            raise ValidationError(
                f"factor {i} is {a.shape[0]}x{a.shape[1]}, expected square"
            )
        diags.append(np.diagonal(a).copy())
    g = diags[0]
    for d in diags[1:]:
        g = g[..., None] * d
    return g


def row_sq_project(cross, eig=None, sigma2=None, mask=None):
    """Row-wise squared projections of a Kronecker cross-covariance block.

    Eig variant (pass ``eig`` and ``sigma2``): returns
    diag(C (K + sigma2*I)^-1 C^T) for a Kronecker cross block C, via the
    identity diag(A diag(d) A^T) = (A o A) d applied per factor with the
    weights 1/(lambda + sigma2).

    Mask variant (pass ``mask``, a 0/1 field tensor over the training
    lattice): returns (C o C) vec(mask) = per-test-point squared norm of the
    cross-covariance row restricted to the masked (selected) columns.
    """
    factors = cross.factors if isinstance(cross, KronOperator) else tuple(cross)
    if (eig is None) == (mask is None):
        raise ValidationError("pass exactly one of eig (with sigma2) or mask")
    if eig is not None:
        if sigma2 is None or sigma2 <= 0:
            raise ValidationError("eig variant requires sigma2 > 0")
        if len(eig.eigvecs) != len(factors):
            raise DimensionError(
                f"cross block has {len(factors)} factors but eigendecomposition "
                f"has {len(eig.eigvecs)}"
            )
        projected = []
        for i, (c, u) in enumerate(zip(factors, eig.eigvecs)):
            if c.shape[1] != u.shape[0]:
                raise DimensionError(
                    f"factor {i}: cross block {c.shape} does not conform with "
                    f"eigenvector matrix {u.shape}"
                )
            cu = c @ u
            projected.append(cu * cu)
        weights = 1.0 / (eig.eig_tensor() + sigma2)
        return kron_matvec(projected, weights)
    mask = np.asarray(mask, dtype=np.float64)
    squared = [np.asarray(c, dtype=np.float64) ** 2 for c in factors]
    return kron_matvec(squared, mask)
