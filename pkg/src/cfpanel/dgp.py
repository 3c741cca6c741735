"""Simulated low-rank factor panels with known treatment effects.

    Y[i, t] = a[i] + b[t] + sum_k load[i, k] * fac[t, k] + eps[i, t]

with a treatment shift ``effect_path[t]`` added to the treated unit's post
cells. Used as ground truth for every estimator.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from cfpanel.inference import BootstrapConfig, blocked_bootstrap, make_rng, placebo_in_space, rmspe_ratio
from cfpanel.panel import PanelDataset, TreatmentSpec, panel_from_arrays

logger = logging.getLogger(__name__)

__all__ = ["DGPConfig", "MonteCarloRow", "SimulatedPanel", "generate_factor_panel", "run_monte_carlo"]


@dataclass(frozen=True)
class DGPConfig:
    n_units: int = 37
    n_years: int = 33
    first_year: int = 1990
    rank: int = 2
    noise_sd: float = 0.02
    effect: float = -0.75
    effect_path: tuple[float, ...] | None = None
    treated_index: int = 0
    treatment_index: int = 21
    seed: int = 0
    unit_effect_range: tuple[float, float] = (22.0, 26.0)
    time_effect_range: tuple[float, float] = (0.0, 1.0)
    factor_scale: float = 1.0
    noise: str = "iid"
    outcome: str = "y"
    label: str = ""

    def __post_init__(self):
        if self.n_units < 2 or self.n_years < 2:
            raise ValueError("need at least two units and two years")
        if not 0 <= self.rank <= min(self.n_units, self.n_years):
            raise ValueError("rank must be between 0 and min(n_units, n_years)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if not 0 < self.treatment_index < self.n_years:
            raise ValueError("treatment_index must leave at least one pre and one post year")
        if not 0 <= self.treated_index < self.n_units:
            raise ValueError("treated_index out of range")
        if self.effect_path is not None and len(self.effect_path) != self.n_post:
            raise ValueError(f"effect_path needs {self.n_post} entries, got {len(self.effect_path)}")
        if self.noise != "iid":
            raise NotImplementedError("only i.i.d. Gaussian noise is implemented")

    @property
    def n_post(self) -> int:
        return self.n_years - self.treatment_index

    @property
    def deltas(self) -> np.ndarray:
        if self.effect_path is not None:
            return np.asarray(self.effect_path, dtype=float)
        return np.full(self.n_post, float(self.effect))

    @property
    def true_att(self) -> float:
        return float(np.mean(self.deltas))


class SimulatedPanel(NamedTuple):
    panel: PanelDataset
    spec: TreatmentSpec
    true_att: float
    untreated: np.ndarray


def unit_names(n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"unit{i:0{width}d}" for i in range(n)]


def generate_factor_panel(cfg: DGPConfig) -> SimulatedPanel:
    """Draw one panel; the same config (including seed) gives the same panel."""
    rng = make_rng(cfg.seed)
    N, T, r = cfg.n_units, cfg.n_years, cfg.rank
    a = rng.uniform(*cfg.unit_effect_range, size=N)
    b = rng.uniform(*cfg.time_effect_range, size=T)
    loadings = rng.standard_normal((N, r))
    factors = rng.standard_normal((T, r))
    eps = rng.standard_normal((N, T)) * cfg.noise_sd
    Y0 = a[:, None] + b[None, :] + cfg.factor_scale * loadings @ factors.T + eps
    Y = Y0.copy()
    Y[cfg.treated_index, cfg.treatment_index :] += cfg.deltas
    units = unit_names(N)
    years = list(range(cfg.first_year, cfg.first_year + T))
    panel = panel_from_arrays(units, years, [cfg.outcome], Y)
    spec = TreatmentSpec(units[cfg.treated_index], years[cfg.treatment_index])
    return SimulatedPanel(panel, spec, cfg.true_att, Y0)


@dataclass(frozen=True)
class MonteCarloRow:
    label: str
    estimator: str
    n_runs: int
    n_failed: int
    true_att: float
    mean_att: float
    mean_bias: float
    mcse_bias: float
    rmse: float
    coverage: float
    mean_placebo_p: float
    noise_sd: float
    atts: tuple[float, ...] = field(default=(), repr=False)
    placebo_ps: tuple[float, ...] = field(default=(), repr=False)

    def as_dict(self, include_draws: bool = False) -> dict:
        d = asdict(self)
        if not include_draws:
            d.pop("atts")
            d.pop("placebo_ps")
        return d


def _summarize(label, name, cfg, atts, covered, pps, n_failed) -> MonteCarloRow:
    atts_a = np.asarray(atts, dtype=float)
    n = atts_a.size
    true_att = cfg.true_att
    if n:
        bias = atts_a - true_att
        mean_bias = float(bias.mean())
        mcse = float(bias.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        rmse = math.sqrt(float(np.mean(bias**2)))
        coverage = float(np.mean(covered)) if covered else math.nan
    else:
        mean_bias = mcse = rmse = coverage = math.nan
    return MonteCarloRow(
        label=label,
        estimator=name,
        n_runs=n,
        n_failed=n_failed,
        true_att=true_att,
        mean_att=float(atts_a.mean()) if n else math.nan,
        mean_bias=mean_bias,
        mcse_bias=mcse,
        rmse=rmse,
        coverage=coverage,
        mean_placebo_p=float(np.mean(pps)) if pps else math.nan,
        noise_sd=cfg.noise_sd,
        atts=tuple(float(x) for x in atts_a),
        placebo_ps=tuple(float(x) for x in pps),
    )


def run_monte_carlo(
    configs: Sequence[DGPConfig],
    estimators: dict,
    n_seeds: int,
    bootstrap: BootstrapConfig | None = BootstrapConfig(replications=1000),
    placebo: bool = False,
    base_seed: int = 0,
) -> list[MonteCarloRow]:
    """Bias, RMSE, CI coverage and placebo p per (config, estimator).

    ``estimators`` maps a display name to a callable estimator. Seed ``s`` of
    every config uses ``base_seed + s`` for the panel and the bootstrap, so
    rows are comparable across estimators. Failed runs are logged and
    counted, never raised.
    """
    rows = []
    for ci, cfg in enumerate(configs):
        label = cfg.label or f"config{ci}"
        for name, est in estimators.items():
            atts, covered, pps, n_failed = [], [], [], 0
            for s in range(n_seeds):
                seed = base_seed + s
                sim = generate_factor_panel(replace(cfg, seed=seed))
                try:
                    fit = est(sim.panel, sim.spec, cfg.outcome)
                    att = float(np.mean(fit.gaps.post))
                    if not math.isfinite(att):
                        raise ValueError("non-finite ATT")
                    if bootstrap is not None and fit.gaps.post.size >= 2:
                        boot = blocked_bootstrap(fit.gaps.post, replace(bootstrap, seed=seed))
                        covered.append(boot.ci_lower <= sim.true_att <= boot.ci_upper)
                    if placebo:
                        pest = est.for_placebo(fit) if hasattr(est, "for_placebo") else est
                        ratio = rmspe_ratio(fit.gaps.pre, fit.gaps.post)
                        pps.append(placebo_in_space(sim.panel, sim.spec, cfg.outcome, pest, ratio).p_placebo)
                except Exception as exc:  # noqa: BLE001
                    n_failed += 1
                    logger.warning("run %s/%s seed %d failed: %s", label, name, seed, exc)
                    continue
                atts.append(att)
            rows.append(_summarize(label, name, cfg, atts, covered, pps, n_failed))
    return rows


MC_COLUMNS = (
    "label",
    "estimator",
    "noise_sd",
    "n_runs",
    "n_failed",
    "true_att",
    "mean_att",
    "mean_bias",
    "mcse_bias",
    "rmse",
    "coverage",
    "mean_placebo_p",
)


def write_monte_carlo(rows: Iterable[MonteCarloRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MC_COLUMNS)
        for r in rows:
            d = r.as_dict()
            w.writerow([d[c] if isinstance(d[c], str) else f"{d[c]:.6g}" for c in MC_COLUMNS])
