"""Reference solutions computed without the package's solvers."""

import itertools
import math

import numpy as np


def simplex_grid_mspe(y, X, step=1e-3):
    """Best MSPE over all simplex points on a regular grid (J <= 3)."""
    T, J = X.shape
    n = int(round(1 / step))
    if J == 1:
        return float(np.mean((y - X[:, 0]) ** 2)), np.array([1.0])
    if J == 2:
        a = np.arange(n + 1) / n
        W = np.stack([a, 1 - a], axis=1)
    elif J == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        a, b = i[keep] / n, j[keep] / n
        W = np.stack([a, b, 1 - a - b], axis=1)
    else:
        raise ValueError("grid oracle supports J <= 3")
    R = y[None, :] - W @ X.T
    m = np.mean(R**2, axis=1)
    k = int(np.argmin(m))
    return float(m[k]), W[k]


def ols_with_intercept(y, X):
    """Normal equations for y ~ a + X w."""
    A = np.column_stack([np.ones(len(y)), X])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    return coef[0], coef[1:]


def univariate_lasso_std(y, x, lam):
    """Closed form for one standardized regressor: sign(rho) * max(|rho| - lam, 0)."""
    xs = (x - x.mean()) / x.std()
    rho = float(xs @ (y - y.mean())) / len(y)
    return math.copysign(max(abs(rho) - lam, 0.0), rho)


def circular_block_replicates(x, b):
    """Every circular block replicate when one block covers the series (b = n)."""
    n = len(x)
    return [float(np.mean([x[(s + k) % n] for k in range(b)])) for s in range(n)]


def enumerate_block_means(x, b):
    """All replicate means for a given block length by brute-force enumeration."""
    n = len(x)
    n_blocks = math.ceil(n / b)
    out = []
    for starts in itertools.product(range(n), repeat=n_blocks):
        seq = [x[(s + k) % n] for s in starts for k in range(b)][:n]
        out.append(float(np.mean(seq)))
    return out


def lasso_kkt_residual(y, X, weights, lam):
    """Subgradient violation of original-scale weights for the objective
    (1/2T)||yc - Xs b||^2 + lam ||b||_1 on centred y and ddof=0 standardized X."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    Xs = (X - X.mean(axis=0)) / sd
    b = np.asarray(weights, dtype=float) * sd
    g = Xs.T @ (y - y.mean() - Xs @ b) / len(y)
    worst = 0.0
    for gj, bj in zip(g, b):
        v = abs(gj - lam * math.copysign(1.0, bj)) if bj != 0 else max(abs(gj) - lam, 0.0)
        worst = max(worst, v)
    return worst


def ks_distance_uniform(p):
    """Kolmogorov-Smirnov distance between the empirical CDF of ``p`` and U(0, 1)."""
    p = np.sort(np.asarray(p, dtype=float))
    n = p.size
    upper = np.arange(1, n + 1) / n - p
    lower = p - np.arange(n) / n
    return float(max(upper.max(), lower.max()))
