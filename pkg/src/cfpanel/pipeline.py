"""Per-outcome estimation: fit, bootstrap, placebo, and assembly into ATTEstimate rows.

This is the layer the CLI drives. It knows nothing about files; it turns a
panel and a treatment spec into result objects.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from cfpanel.completion import estimate_att_mc, select_regimes
from cfpanel.estimators import REGIMES, Estimator
from cfpanel.inference import (
    ATTEstimate,
    BootstrapConfig,
    PlaceboResult,
    assemble_att,
    blocked_bootstrap,
    gap_band,
    placebo_in_space,
    rmspe_ratio,
)
from cfpanel.lasso import DEFAULT_LASSO_GRID, PenaltyGrid
from cfpanel.panel import PanelDataset, TreatmentSpec

logger = logging.getLogger(__name__)

__all__ = ["AnalysisSettings", "OutcomeResult", "RegimeResult", "run_analysis", "run_outcome"]


@dataclass(frozen=True)
class AnalysisSettings:
    """Everything that shapes an estimation run apart from the data."""

    method: str = "lasso"
    grid: PenaltyGrid = DEFAULT_LASSO_GRID
    folds: int = 5
    regimes: tuple[str, ...] = ("high",)
    n_points: int = 20
    bootstrap: BootstrapConfig = BootstrapConfig()
    placebo: bool = True
    placebo_jobs: int = 1

    def __post_init__(self):
        Estimator(self.method, self.grid, self.folds)  # validates method and folds
        if not self.regimes or any(r not in REGIMES for r in self.regimes):
            raise ValueError(f"regimes must be drawn from {', '.join(REGIMES)}")
        if self.method != "mc" and self.regimes != ("high",):
            object.__setattr__(self, "regimes", ("high",))

    def estimator(self, regime: str = "high") -> Estimator:
        return Estimator(self.method, self.grid, self.folds, regime=regime, n_points=self.n_points)


@dataclass(frozen=True, eq=False)
class RegimeResult:
    """One fitted estimate (one shrinkage regime for matrix completion)."""

    estimate: ATTEstimate
    fit: object
    placebo: PlaceboResult | None
    band_lower: np.ndarray
    band_upper: np.ndarray


@dataclass(frozen=True, eq=False)
class OutcomeResult:
    outcome: str
    method: str
    results: dict = field(default_factory=dict)  # regime -> RegimeResult
    regimes: object = None  # ShrinkageRegimes for mc
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _infer(fit, outcome, settings, panel, spec, estimator, regime_label):
    gaps = fit.gaps
    boot = None
    if gaps.post.size >= 2:
        boot = blocked_bootstrap(gaps.post, settings.bootstrap)
    else:
        logger.warning("%s: one post-treatment year, bootstrap skipped", outcome)
    placebo = None
    if settings.placebo:
        ratio = rmspe_ratio(gaps.pre, gaps.post)
        placebo = placebo_in_space(
            panel, spec, outcome, estimator.for_placebo(fit), treated_ratio=ratio, n_jobs=settings.placebo_jobs
        )
    est = assemble_att(outcome, settings.method, gaps.pre, gaps.post, boot, placebo, regime=regime_label)
    extras = {}
    if fit.weights is not None:
        extras["weights"] = fit.weights.as_dict()
    if "lambda" in fit.info:
        extras["lambda"] = float(fit.info["lambda"])
    if boot is not None:
        extras["block_length"] = boot.block_length
    est = replace(est, extras=extras)
    lo, hi = gap_band(gaps.post, est)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        lo, hi = gaps.post.copy(), gaps.post.copy()
    return RegimeResult(est, fit, placebo, lo, hi)


def run_outcome(
    panel: PanelDataset, spec: TreatmentSpec, outcome: str, settings: AnalysisSettings
) -> OutcomeResult:
    """Estimate one outcome; errors are captured, not raised."""
    try:
        if settings.method == "mc":
            regimes = select_regimes(panel, spec, outcome, k=settings.folds, n_points=settings.n_points)
            results = {}
            for regime in settings.regimes:
                fit = estimate_att_mc(panel, spec, outcome, regime, regimes=regimes, k=settings.folds)
                est = settings.estimator(regime)
                results[regime] = _infer(fit, outcome, settings, panel, spec, est, regime)
            return OutcomeResult(outcome, "mc", results, regimes)
        est = settings.estimator()
        fit = est(panel, spec, outcome)
        return OutcomeResult(outcome, settings.method, {"high": _infer(fit, outcome, settings, panel, spec, est, None)})
    except Exception as exc:  # noqa: BLE001 - reported per outcome
        logger.error("%s: %s: %s", outcome, type(exc).__name__, exc)
        return OutcomeResult(outcome, settings.method, error=f"{type(exc).__name__}: {exc}")


def _run_one(args):
    return run_outcome(*args)


def run_analysis(
    panel: PanelDataset,
    spec: TreatmentSpec,
    outcomes: Sequence[str],
    settings: AnalysisSettings,
    workers: int = 1,
) -> list[OutcomeResult]:
    """Run every outcome, in input order, optionally across worker processes.

    Results do not depend on ``workers``: each outcome uses the same seeded
    bootstrap configuration whichever process runs it.
    """
    jobs = [(panel, spec, o, settings) for o in outcomes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def estimates_by_regime(results: Sequence[OutcomeResult]) -> dict[str, list[ATTEstimate]]:
    out: dict[str, list[ATTEstimate]] = {}
    for r in results:
        for regime, rr in r.results.items():
            out.setdefault(regime, []).append(rr.estimate)
    return out


def finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x
