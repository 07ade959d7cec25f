"""Pure-Python SGD kernels, bit-identical to the compiled extension.

Every arithmetic expression here mirrors the C code in ``_sgd.pyx`` operation
for operation: Python floats are IEEE-754 doubles and ``math.exp`` calls the
same libm, so both backends produce exactly the same factor matrices for the
same step sequence.  All randomness (shuffle order, negative sampling) happens
in the caller; the kernels are deterministic array programs.
"""

import math

import numpy as np

_EXP_INF = float("inf")


def _exp(x: float) -> float:
    # C's exp() overflows to +inf; Python's raises OverflowError. Match C.
    try:
        return math.exp(x)
    except OverflowError:
        return _EXP_INF


def svd_steps(Q, p, rows, ratings, lr, reg, p_old):
    """Run explicit-feedback SGD steps in the given order.

    Q is the (n_items, k) float64 item-factor matrix, p the length-k user
    vector; both are mutated in place.  ``rows[s]`` is the Q row for step s,
    ``ratings[s]`` the target.  ``p_old`` is a caller-provided length-k
    scratch buffer.  Returns -1, or the index of the first step whose error
    term was non-finite.
    """
    k = p.shape[0]
    # C overflows silently to inf/nan; numpy scalar ops warn. Divergence is
    # detected via the isfinite checks, so keep numpy quiet to match C.
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(rows.shape[0]):
            q = Q[rows[s]]
            e = 0.0
            for f in range(k):
                e += p[f] * q[f]
            e = ratings[s] - e
            if not math.isfinite(e):
                return s
            for f in range(k):
                p_old[f] = p[f]
            for f in range(k):
                p[f] = p[f] + lr * (e * q[f] - reg * p[f])
            for f in range(k):
                q[f] = q[f] + lr * (e * p_old[f] - reg * q[f])
    return -1


def bpr_steps(Q, p, pos_rows, neg_rows, lr, reg, p_old):
    """Run pairwise-ranking SGD steps over aligned (positive, negative) rows.

    Same in-place conventions as :func:`svd_steps`.  Each step pushes the
    positive row's score above the negative's with a logistic gradient.
    Returns -1, or the index of the first step whose margin was non-finite.
    """
    k = p.shape[0]
    # C overflows silently to inf/nan; numpy scalar ops warn. Divergence is
    # detected via the isfinite checks, so keep numpy quiet to match C.
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(pos_rows.shape[0]):
            qi = Q[pos_rows[s]]
            qj = Q[neg_rows[s]]
            xhat = 0.0
            for f in range(k):
                xhat += p[f] * (qi[f] - qj[f])
            if not math.isfinite(xhat):
                return s
            g = 1.0 / (1.0 + _exp(xhat))
            for f in range(k):
                p_old[f] = p[f]
            for f in range(k):
                p[f] = p[f] + lr * (g * (qi[f] - qj[f]) - reg * p[f])
            for f in range(k):
                qi[f] = qi[f] + lr * (g * p_old[f] - reg * qi[f])
            for f in range(k):
                qj[f] = qj[f] + lr * (-g * p_old[f] - reg * qj[f])
    return -1
