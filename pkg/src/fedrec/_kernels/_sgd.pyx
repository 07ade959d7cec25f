# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SGD kernels for local matrix-factorization training.

Must stay arithmetically identical to ``fallback.py``: same operation order,
no FMA contraction (enforced by -ffp-contract=off in setup.py), libm exp.
The caller owns all randomness and passes explicit step sequences.
"""

from libc.math cimport exp, isfinite


def svd_steps(double[:, ::1] Q, double[::1] p,
              const long long[::1] rows, const double[::1] ratings,
              double lr, double reg, double[::1] p_old):
    """Explicit-feedback SGD steps; mutates Q and p in place.

    Returns -1, or the index of the first step with a non-finite error term.
    """
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t k = p.shape[0]
    cdef Py_ssize_t s, f
    cdef Py_ssize_t row
    cdef double e
    for s in range(n):
        row = <Py_ssize_t> rows[s]
        e = 0.0
        for f in range(k):
            e += p[f] * Q[row, f]
        e = ratings[s] - e
        if not isfinite(e):
            return s
        for f in range(k):
            p_old[f] = p[f]
        for f in range(k):
            p[f] = p[f] + lr * (e * Q[row, f] - reg * p[f])
        for f in range(k):
            Q[row, f] = Q[row, f] + lr * (e * p_old[f] - reg * Q[row, f])
    return -1


def bpr_steps(double[:, ::1] Q, double[::1] p,
              const long long[::1] pos_rows, const long long[::1] neg_rows,
              double lr, double reg, double[::1] p_old):
    """Pairwise-ranking SGD steps; mutates Q and p in place.

    Returns -1, or the index of the first step with a non-finite margin.
    """
    cdef Py_ssize_t n = pos_rows.shape[0]
    cdef Py_ssize_t k = p.shape[0]
    cdef Py_ssize_t s, f
    cdef Py_ssize_t ri, rj
    cdef double xhat, g
    for s in range(n):
        ri = <Py_ssize_t> pos_rows[s]
        rj = <Py_ssize_t> neg_rows[s]
        xhat = 0.0
        for f in range(k):
            xhat += p[f] * (Q[ri, f] - Q[rj, f])
        if not isfinite(xhat):
            return s
        g = 1.0 / (1.0 + exp(xhat))
        for f in range(k):
            p_old[f] = p[f]
        for f in range(k):
            p[f] = p[f] + lr * (g * (Q[ri, f] - Q[rj, f]) - reg * p[f])
        for f in range(k):
            Q[ri, f] = Q[ri, f] + lr * (g * p_old[f] - reg * Q[ri, f])
        for f in range(k):
            Q[rj, f] = Q[rj, f] + lr * (-g * p_old[f] - reg * Q[rj, f])
    return -1
