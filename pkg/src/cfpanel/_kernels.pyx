# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Signatures and semantics mirror ``cfpanel._kernels_py`` exactly; that module is
the reference the tests compare against.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def lasso_cd(
    const double[:, ::1] xt,
    const double[::1] y,
    double[::1] beta,
    double lam,
    double tol,
    Py_ssize_t max_sweeps,
):
    """Cyclic coordinate descent for ``(1/2n)||y - X b||^2 + lam ||b||_1``.

    ``xt`` is the transposed design (p x n, C order) so each column is
    contiguous. ``beta`` is updated in place. After each full sweep the
    nonzero coordinates are cycled alone until they settle; the run ends when
    a full sweep moves no coefficient by ``tol`` or more. Returns
    ``(sweeps, max_change)``, counting active-set sweeps too.
    """
    cdef Py_ssize_t p = xt.shape[0]
    cdef Py_ssize_t n = xt.shape[1]
    cdef Py_ssize_t i, j, a, n_active, sweep = 0
    cdef double inv_n = 1.0 / n
    cdef double max_change = 0.0, acc
    cdef double[::1] colsq = np.empty(p)
    cdef double[::1] r = np.empty(n)
    cdef Py_ssize_t[::1] active = np.empty(p, dtype=np.intp)

    for i in range(n):
        r[i] = y[i]
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += xt[j, i] * xt[j, i]
        colsq[j] = acc * inv_n
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= xt[j, i] * beta[j]

    while sweep < max_sweeps:
        sweep += 1
        max_change = 0.0
        for j in range(p):
            max_change = _cd_update(xt, r, beta, colsq, j, n, inv_n, lam, max_change)
        if max_change < tol:
            break
        n_active = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[n_active] = j
                n_active += 1
        while sweep < max_sweeps:
            sweep += 1
            acc = 0.0
            for a in range(n_active):
                acc = _cd_update(xt, r, beta, colsq, active[a], n, inv_n, lam, acc)
            if acc < tol:
                break
    return sweep, max_change


cdef inline double _cd_update(
    const double[:, ::1] xt,
    double[::1] r,
    double[::1] beta,
    const double[::1] colsq,
    Py_ssize_t j,
    Py_ssize_t n,
    double inv_n,
    double lam,
    double max_change,
) noexcept:
    cdef Py_ssize_t i
    cdef double acc = 0.0, rho, old, new, delta
    if colsq[j] == 0.0:
        return max_change
    old = beta[j]
    for i in range(n):
        acc += xt[j, i] * r[i]
    rho = acc * inv_n + colsq[j] * old
    if rho > lam:
        new = (rho - lam) / colsq[j]
    elif rho < -lam:
        new = (rho + lam) / colsq[j]
    else:
        new = 0.0
    delta = new - old
    if delta != 0.0:
        for i in range(n):
            r[i] -= delta * xt[j, i]
        beta[j] = new
        if fabs(delta) > max_change:
            return fabs(delta)
    return max_change


def circular_block_means(
    const double[::1] x,
    const cnp.int64_t[:, ::1] starts,
    Py_ssize_t block_length,
):
    """Mean of each circular block-bootstrap replicate.

    Row ``r`` of ``starts`` holds the block start indices of replicate ``r``;
    blocks are concatenated and truncated to ``len(x)``.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t reps = starts.shape[0]
    cdef Py_ssize_t nblocks = starts.shape[1]
    cdef Py_ssize_t r, b, k, filled, s
    cdef double acc
    out = np.empty(reps)
    cdef double[::1] out_v = out

    for r in range(reps):
        acc = 0.0
        filled = 0
        for b in range(nblocks):
            s = starts[r, b]
            for k in range(block_length):
                if filled == n:
                    break
                acc += x[(s + k) % n]
                filled += 1
        out_v[r] = acc / n
    return out
