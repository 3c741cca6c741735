"""LASSO-augmented synthetic control.

Donor weights are sign-unrestricted and l1-penalized, with an unpenalized
intercept. Donor columns are standardized (centered, unit population
variance) before the penalty is applied, so a single penalty grid is usable
across outcomes measured on very different scales.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cfpanel._backend import get_kernels
from cfpanel.panel import PanelDataset, TreatmentSpec, split_pre_post
from cfpanel.scm import GapSeries, SCMFit, WeightVector, predict_counterfactual

__all__ = [
    "DEFAULT_LASSO_GRID",
    "CVReport",
    "PenaltyGrid",
    "block_folds",
    "cv_select_lambda",
    "fit_lasso_weights",
    "kkt_violation",
    "lasso_lambda_max",
    "lasso_scm_analysis",
]

CD_TOL = 1e-9
CD_MAX_SWEEPS = 100_000
CV_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PenaltyGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("penalty grid is empty")
        if any(not (v > 0 and math.isfinite(v)) for v in vals):
            raise ValueError("penalty values must be positive and finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("penalty grid must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @classmethod
    def parse(cls, text: str) -> PenaltyGrid:
        return cls(tuple(sorted(float(v) for v in text.split(",") if v.strip())))


DEFAULT_LASSO_GRID = PenaltyGrid((0.01, 0.05, 0.1, 0.2, 0.5))


def _standardize(X: np.ndarray, y: np.ndarray):
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    y_mean = float(y.mean())
    # Relative threshold so constant columns with rounding noise still count as constant.
    tiny = 1e-12 * np.maximum(1.0, np.abs(x_mean))
    keep = x_scale > tiny
    Xs = np.zeros_like(X)
    Xs[:, keep] = (X[:, keep] - x_mean[keep]) / x_scale[keep]
    return Xs, y - y_mean, x_mean, x_scale, y_mean, keep


def lasso_lambda_max(y_pre, X_pre) -> float:
    """Smallest penalty at which every standardized weight is zero."""
    X = np.asarray(X_pre, dtype=float)
    y = np.asarray(y_pre, dtype=float)
    Xs, yc, *_ = _standardize(X, y)
    return float(np.max(np.abs(Xs.T @ yc)) / X.shape[0]) if X.shape[1] else 0.0


def _polish(Xs: np.ndarray, yc: np.ndarray, beta: np.ndarray, lam: float) -> np.ndarray:
    """Solve the stationarity equations on the active set with signs fixed.

    Coordinate descent stops on a step-size criterion; this step removes the
    residual gradient error. The polished point is kept only if it keeps the
    signs and the inactive-set conditions hold, i.e. it is a true solution.
    """
    n = Xs.shape[0]
    active = np.flatnonzero(beta)
    if active.size == 0:
        return beta
    s = np.sign(beta[active])
    XA = Xs[:, active]
    G = XA.T @ XA / n
    rhs = XA.T @ yc / n - lam * s
    sol, *_ = np.linalg.lstsq(G, rhs, rcond=None)
    if not np.allclose(G @ sol, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max())):
        return beta
    if np.any(np.sign(sol) != s):
        return beta
    cand = np.zeros_like(beta)
    cand[active] = sol
    grad = Xs.T @ (yc - Xs @ cand) / n
    inactive = np.ones(beta.size, dtype=bool)
    inactive[active] = False
    if np.any(np.abs(grad[inactive]) > lam + 1e-12):
        return beta
    return cand


def fit_lasso_weights(
    y_pre,
    X_pre,
    lam: float,
    donors: Sequence[str] | None = None,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
    warm_start: np.ndarray | None = None,
    warn: bool = True,
    backend: str | None = None,
) -> WeightVector:
    """Penalized donor regression with intercept.

    Minimizes ``(1/2T) ||y - a - Xs b||^2 + lam ||b||_1`` over the
    standardized design ``Xs``, then maps ``b`` back to weights on the raw
    donor series. Zero-variance donors get weight 0 (with a warning unless
    ``warn`` is false).

    ``warm_start`` is a standardized coefficient vector; the result's
    ``extra["coef_std"]`` can be passed back in along a penalty path.
    """
    y = np.asarray(y_pre, dtype=float)
    X = np.asarray(X_pre, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: y {y.shape}, X {X.shape}")
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("penalty must be a nonnegative finite number")
    T0, J = X.shape
    if T0 < 2:
        raise ValueError("LASSO fit needs at least two pre-treatment periods")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if donors is None:
        donors = tuple(f"donor{j}" for j in range(J))

    Xs, yc, x_mean, x_scale, y_mean, keep = _standardize(X, y)
    dropped = [donors[j] for j in np.flatnonzero(~keep)]
    if dropped and warn:
        warnings.warn(
            f"zero-variance donor(s) dropped from LASSO fit: {', '.join(map(str, dropped))}",
            UserWarning,
            stacklevel=2,
        )
    beta = np.zeros(J) if warm_start is None else np.array(warm_start, dtype=float)
    beta[~keep] = 0.0
    if lam >= float(np.max(np.abs(Xs.T @ yc))) / T0:
        # zero satisfies the optimality conditions exactly; skip the solver
        beta[:] = 0.0
        sweeps, converged = 0, True
    else:
        kern = get_kernels(backend)
        sweeps, change = kern.lasso_cd(np.ascontiguousarray(Xs.T), yc, beta, float(lam), tol, max_sweeps)
        converged = change < tol
        beta = _polish(Xs, yc, beta, float(lam))

    w = np.zeros(J)
    w[keep] = beta[keep] / x_scale[keep]
    intercept = y_mean - float(x_mean @ w)
    resid = y - intercept - X @ w
    return WeightVector(
        tuple(donors),
        w,
        intercept,
        "unrestricted",
        float(np.mean(resid**2)),
        bool(converged),
        int(sweeps),
        extra={"lambda": float(lam), "coef_std": beta, "dropped": tuple(dropped)},
    )


def kkt_violation(y_pre, X_pre, w: WeightVector) -> float:
    """Largest subgradient-condition violation on the standardized scale."""
    y = np.asarray(y_pre, dtype=float)
    X = np.asarray(X_pre, dtype=float)
    lam = w.extra["lambda"]
    Xs, yc, _, _, _, keep = _standardize(X, y)
    beta = w.extra["coef_std"]
    grad = Xs.T @ (yc - Xs @ beta) / X.shape[0]
    nz = beta != 0
    viol = np.zeros(X.shape[1])
    viol[nz] = np.abs(grad[nz] - lam * np.sign(beta[nz]))
    viol[~nz & keep] = np.maximum(np.abs(grad[~nz & keep]) - lam, 0.0)
    return float(viol.max()) if viol.size else 0.0


def block_folds(n: int, k: int) -> list[tuple[int, int]]:
    """Contiguous ``[start, stop)`` blocks; remainder periods go to the earliest folds."""
    if k < 1:
        raise ValueError("need at least one fold")
    if n < k:
        raise ValueError(
            f"{n} pre-treatment periods cannot form {k} folds; use --folds {max(n, 1)} or fewer"
        )
    base, extra = divmod(n, k)
    bounds, start = [], 0
    for f in range(k):
        stop = start + base + (1 if f < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


@dataclass(frozen=True, eq=False)
class CVReport:
    grid: PenaltyGrid
    folds: tuple[tuple[int, int], ...]
    rmspe: np.ndarray  # (n_lambda, n_folds)
    selected: float

    @property
    def mean_rmspe(self) -> np.ndarray:
        return self.rmspe.mean(axis=1)

    def as_dict(self) -> dict:
        return {
            "grid": list(self.grid.values),
            "folds": [list(f) for f in self.folds],
            "rmspe": self.rmspe.tolist(),
            "mean_rmspe": self.mean_rmspe.tolist(),
            "selected": self.selected,
        }


def select_min(values: Sequence[float], scores: np.ndarray, prefer_larger: bool = True) -> float:
    """Grid value with the smallest score; near-ties go to the larger value."""
    scores = np.asarray(scores, dtype=float)
    best = float(np.min(scores))
    tied = [v for v, s in zip(values, scores) if s <= best + CV_TIE_TOL]
    return max(tied) if prefer_larger else min(tied)


def cv_select_lambda(
    y_pre,
    X_pre,
    grid: PenaltyGrid = DEFAULT_LASSO_GRID,
    k: int = 5,
    backend: str | None = None,
) -> CVReport:
    """Choose the penalty by contiguous time-block cross-validation.

    Each block is held out in turn, the model is fit on the remaining
    periods for every penalty (largest first, warm-started), and the
    held-out RMSPE is recorded. The penalty with the lowest mean RMSPE wins.
    """
    y = np.asarray(y_pre, dtype=float)
    X = np.asarray(X_pre, dtype=float)
    folds = block_folds(y.shape[0], k)
    lams = list(grid.values)
    rmspe = np.zeros((len(lams), k))
    for f, (a, b) in enumerate(folds):
        train = np.r_[0:a, b : y.shape[0]]
        beta = None
        for li in range(len(lams) - 1, -1, -1):
            w = fit_lasso_weights(
                y[train], X[train], lams[li], warm_start=beta, warn=False, backend=backend
            )
            beta = w.extra["coef_std"]
            pred = predict_counterfactual(w, X[a:b])
            rmspe[li, f] = math.sqrt(float(np.mean((y[a:b] - pred) ** 2)))
    return CVReport(grid, tuple(folds), rmspe, select_min(lams, rmspe.mean(axis=1)))


def lasso_scm_analysis(
    panel: PanelDataset,
    spec: TreatmentSpec,
    outcome: str,
    grid: PenaltyGrid = DEFAULT_LASSO_GRID,
    k: int = 5,
    backend: str | None = None,
) -> SCMFit:
    """CV-select the penalty, refit on the full pre-period, project all years."""
    s = split_pre_post(panel, spec, outcome)
    cv = cv_select_lambda(s.y_pre, s.X_pre, grid, k, backend=backend)
    w = fit_lasso_weights(s.y_pre, s.X_pre, cv.selected, s.donors, backend=backend)
    synth = predict_counterfactual(w, s.X_full)
    gaps = GapSeries(s.years, s.y_full, synth, len(s.pre_years))
    return SCMFit("lasso", outcome, w, gaps, {"cv": cv, "lambda": cv.selected})
