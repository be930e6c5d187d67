"""Fault-injection hooks for the verification suites' negative controls.

Setting ``KGP_PERTURB=kron`` corrupts the first covariance factor by a
relative 1e-3; ``KGP_PERTURB=pseudovalues`` corrupts the gap pseudovalue
solve the same way.  Both are meant to prove that the verify suites
actually fail when the numerics are wrong.  Never set in production.
"""

import os

PERTURB_EPS = 1e-3


def _mode():
    return os.environ.get("KGP_PERTURB", "").strip().lower()


def perturb_factor(factors):
    """Scale the first Gram factor when the kron hook is armed."""
    if _mode() == "kron":
        factors = list(factors)
        factors[0] = factors[0] * (1.0 + PERTURB_EPS)
    return factors


def perturb_pseudovalues(y_g):
    """Scale the solved pseudovalues when the pseudovalue hook is armed."""
    if _mode() == "pseudovalues":
        return y_g * (1.0 + PERTURB_EPS)
    return y_g
