"""Named, picklable estimator configurations with a common call signature."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from cfpanel.completion import complete_treated, estimate_att_mc
from cfpanel.lasso import DEFAULT_LASSO_GRID, PenaltyGrid, lasso_scm_analysis
from cfpanel.panel import PanelDataset, TreatmentSpec
from cfpanel.scm import convex_scm_analysis

METHODS = ("convex", "lasso", "mc")
REGIMES = ("low", "high")


@dataclass(frozen=True)
class Estimator:
    """``Estimator(method, ...)(panel, spec, outcome)`` returns a fit with ``.gaps``.

    For ``mc``, a fixed ``lam`` skips cross-validation (used for placebo
    reruns so every pseudo-treated unit sees the same penalty).
    """

    method: str
    grid: PenaltyGrid = DEFAULT_LASSO_GRID
    folds: int = 5
    regime: str = "high"
    n_points: int = 20
    fe_mode: str = "two-way"
    lam: float | None = None
    path: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {', '.join(REGIMES)}, got {self.regime!r}")
        if self.folds < 2:
            raise ValueError("need at least two cross-validation folds")

    def __call__(self, panel: PanelDataset, spec: TreatmentSpec, outcome: str):
        if self.method == "convex":
            return convex_scm_analysis(panel, spec, outcome)
        if self.method == "lasso":
            return lasso_scm_analysis(panel, spec, outcome, self.grid, self.folds)
        if self.lam is not None:
            return complete_treated(panel, spec, outcome, self.lam, self.fe_mode, path=self.path)
        return estimate_att_mc(
            panel, spec, outcome, self.regime, k=self.folds, fe_mode=self.fe_mode, n_points=self.n_points
        )

    def for_placebo(self, fit) -> Estimator:
        """Configuration to rerun on pseudo-treated units after fitting ``fit``."""
        if self.method == "mc" and self.lam is None:
            regimes = fit.info["regimes"]
            return replace(self, lam=regimes.lam(self.regime), path=tuple(regimes.grid.values))
        return self

    def describe(self) -> dict:
        d = {"method": self.method}
        if self.method == "lasso":
            d.update(grid=list(self.grid.values), folds=self.folds)
        elif self.method == "mc":
            d.update(regime=self.regime, folds=self.folds, n_points=self.n_points, fe_mode=self.fe_mode)
            if self.lam is not None:
                d["lambda"] = self.lam
        return d
