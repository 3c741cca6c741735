"""Pure-Python implementations of the compiled kernels.

Used when the extension is unavailable or ``CFPANEL_PURE_PYTHON`` is set.
"""

import numpy as np


def _cd_update(xt, r, beta, colsq, j, n, lam, max_change):
    if colsq[j] == 0.0:
        return max_change
    old = beta[j]
    xj = xt[j]
    rho = float(xj @ r) / n + colsq[j] * old
    if rho > lam:
        new = (rho - lam) / colsq[j]
    elif rho < -lam:
        new = (rho + lam) / colsq[j]
    else:
        new = 0.0
    delta = new - old
    if delta != 0.0:
        r -= delta * xj
        beta[j] = new
        max_change = max(max_change, abs(delta))
    return max_change


def lasso_cd(xt, y, beta, lam, tol, max_sweeps):
    p, n = xt.shape
    colsq = np.einsum("ji,ji->j", xt, xt) / n
    r = y - beta @ xt
    sweep = 0
    max_change = 0.0
    while sweep < max_sweeps:
        sweep += 1
        max_change = 0.0
        for j in range(p):
            max_change = _cd_update(xt, r, beta, colsq, j, n, lam, max_change)
        if max_change < tol:
            break
        active = np.flatnonzero(beta)
        while sweep < max_sweeps:
            sweep += 1
            change = 0.0
            for j in active:
                change = _cd_update(xt, r, beta, colsq, j, n, lam, change)
            if change < tol:
                break
    return sweep, max_change


def circular_block_means(x, starts, block_length):
    n = x.shape[0]
    offsets = np.arange(block_length)
    idx = (starts[:, :, None] + offsets).reshape(starts.shape[0], -1)[:, :n] % n
    return x[idx].mean(axis=1)
