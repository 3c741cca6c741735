"""Classical synthetic control: simplex-constrained donor weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfpanel.panel import PanelDataset, TreatmentSpec, split_pre_post

__all__ = [
    "GapSeries",
    "SCMFit",
    "WeightVector",
    "convex_scm_analysis",
    "fit_convex_weights",
    "mspe",
    "predict_counterfactual",
]


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Donor weights for a synthetic control.

    ``mode`` is ``"convex"`` (nonnegative, summing to one, no intercept) or
    ``"unrestricted"`` (any sign, with intercept).
    """

    donors: tuple[str, ...]
    weights: np.ndarray
    intercept: float = 0.0
    mode: str = "convex"
    mspe: float = float("nan")
    converged: bool = True
    n_iter: int = 0
    objective_history: tuple[float, ...] = field(default=(), repr=False)
    extra: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict[str, float]:
        return {d: float(w) for d, w in zip(self.donors, self.weights)}

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))


@dataclass(frozen=True, eq=False)
class GapSeries:
    """Observed minus synthetic outcome for the treated unit, all years."""

    years: tuple[int, ...]
    observed: np.ndarray
    synthetic: np.ndarray
    n_pre: int

    @property
    def gap(self) -> np.ndarray:
        return self.observed - self.synthetic

    @property
    def pre(self) -> np.ndarray:
        return self.gap[: self.n_pre]

    @property
    def post(self) -> np.ndarray:
        return self.gap[self.n_pre :]

    @property
    def post_years(self) -> tuple[int, ...]:
        return self.years[self.n_pre :]

    def as_dict(self) -> dict:
        return {
            "years": list(self.years),
            "observed": self.observed.tolist(),
            "synthetic": self.synthetic.tolist(),
            "gap": self.gap.tolist(),
            "n_pre": self.n_pre,
        }


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs must be finite")


def mspe(a, b) -> float:
    """Mean squared difference between two equal-length series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("mspe of empty series")
    return float(np.mean((a - b) ** 2))


def predict_counterfactual(w: WeightVector, X_full) -> np.ndarray:
    """``intercept + X_full @ weights``."""
    X_full = np.asarray(X_full, dtype=float)
    if X_full.ndim != 2 or X_full.shape[1] != w.weights.shape[0]:
        raise ValueError(
            f"donor matrix has {X_full.shape[-1] if X_full.ndim else 0} columns, "
            f"weights have {w.weights.shape[0]}"
        )
    return w.intercept + X_full @ w.weights


def _affine_min(Q: np.ndarray) -> np.ndarray:
    """Minimize a'Qa subject to sum(a) = 1."""
    k = Q.shape[0]
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = Q
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return sol[:k]


def fit_convex_weights(
    y_pre,
    X_pre,
    donors: tuple[str, ...] | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> WeightVector:
    """Nonnegative, sum-to-one weights minimizing pre-period MSPE.

    Because the weights sum to one, ``y - X w = -sum_j w_j (y - x_j)``, so the
    problem is the minimum-norm point of the polytope spanned by
    ``x_j - y``. Wolfe's algorithm solves it exactly: each major cycle adds
    the donor with the steepest descent direction, then re-optimizes over
    the whole active set (fully corrective), dropping donors whose weight
    would turn negative. Stops when the Frank-Wolfe gap falls below ``tol``
    relative to the largest squared donor distance.
    """
    y = np.asarray(y_pre, dtype=float)
    X = np.asarray(X_pre, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: y {y.shape}, X {X.shape}")
    T0, J = X.shape
    if T0 < 1 or J < 1:
        raise ValueError("need at least one period and one donor")
    _check_finite(y, X)
    if donors is None:
        donors = tuple(f"donor{j}" for j in range(J))

    P = X - y[:, None]
    Q = P.T @ P
    scale = max(float(np.max(np.diag(Q))), np.finfo(float).tiny)
    eps = 1e-12

    j0 = int(np.argmin(np.diag(Q)))
    active = [j0]
    lam = np.array([1.0])
    history = [float(Q[j0, j0]) / T0]
    converged = False
    n_iter = 0

    while n_iter < max_iter:
        n_iter += 1
        Qx = Q[:, active] @ lam
        xx = float(lam @ Qx[active])
        j = int(np.argmin(Qx))
        gap = xx - Qx[j]
        if gap <= tol * scale:
            converged = True
            break
        if j in active:
            # Stalled on rounding: the affine solve cannot improve further.
            converged = gap <= 1e-8 * scale
            break
        prev_active, prev_lam = list(active), lam.copy()
        active.append(j)
        lam = np.append(lam, 0.0)
        for _ in range(len(active) + 1):
            alpha = _affine_min(Q[np.ix_(active, active)])
            if np.all(alpha > eps):
                lam = alpha
                break
            neg = alpha <= eps
            ratios = lam[neg] / np.maximum(lam[neg] - alpha[neg], np.finfo(float).tiny)
            theta = float(np.clip(ratios.min(), 0.0, 1.0))
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > eps
            if keep.all():
                keep[int(np.argmin(lam))] = False
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        history.append(float(lam @ Q[np.ix_(active, active)] @ lam) / T0)
        if history[-1] >= history[-2]:
            # No progress possible at working precision; keep the better point.
            history.pop()
            active, lam = prev_active, prev_lam
            converged = gap <= 1e-8 * scale
            break

    w = np.zeros(J)
    w[active] = np.clip(lam, 0.0, None)
    w /= w.sum()
    fit = mspe(y, X @ w)
    return WeightVector(
        tuple(donors), w, 0.0, "convex", fit, converged, n_iter, tuple(history)
    )


@dataclass(frozen=True, eq=False)
class SCMFit:
    """Result of a synthetic-control run for one outcome."""

    method: str
    outcome: str
    weights: WeightVector
    gaps: GapSeries
    info: dict = field(default_factory=dict)

    @property
    def att(self) -> float:
        return float(np.mean(self.gaps.post))


def convex_scm_analysis(panel: PanelDataset, spec: TreatmentSpec, outcome: str) -> SCMFit:
    """Fit convex weights on the pre-period and project the counterfactual."""
    s = split_pre_post(panel, spec, outcome)
    w = fit_convex_weights(s.y_pre, s.X_pre, s.donors)
    synth = predict_counterfactual(w, s.X_full)
    gaps = GapSeries(s.years, s.y_full, synth, len(s.pre_years))
    return SCMFit("convex", outcome, w, gaps)
