"""Blocked-bootstrap uncertainty, RMSPE diagnostics and placebo-in-space p-values."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from cfpanel._backend import get_kernels
from cfpanel.exceptions import EstimationError
from cfpanel.panel import PanelDataset, TreatmentSpec

__all__ = [
    "ATTEstimate",
    "BootstrapConfig",
    "BootstrapResult",
    "PerfectPreFitError",
    "PlaceboResult",
    "assemble_att",
    "blocked_bootstrap",
    "gap_band",
    "make_rng",
    "placebo_in_space",
    "rmspe",
    "rmspe_ratio",
    "significance_stars",
]

RNG_NAME = "numpy.random.PCG64"
DEFAULT_SEED = 20110127


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit's seeded generator (PCG64)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 1000
    block_length: int | None = None
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.block_length is not None and self.block_length < 1:
            raise ValueError("block_length must be at least 1")

    def resolve_block_length(self, n_post: int) -> int:
        b = self.block_length if self.block_length is not None else math.ceil(math.sqrt(n_post))
        if b > n_post:
            raise ValueError(f"block length {b} exceeds the {n_post}-period post window")
        return int(b)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    se: float
    ci_lower: float
    ci_upper: float
    p_bootstrap: float
    replicates: np.ndarray
    block_length: int
    seed: int


def blocked_bootstrap(
    gaps_post,
    cfg: BootstrapConfig = BootstrapConfig(),
    n_jobs: int = 1,
    backend: str | None = None,
) -> BootstrapResult:
    """Circular moving-block bootstrap of the post-period mean gap.

    Each replicate concatenates blocks with uniformly drawn start points
    (wrapping around the end of the series) and truncates to the original
    length. All block starts are drawn up front from one seeded stream, so
    the result does not depend on ``n_jobs``.

    ``p_bootstrap`` is ``2 * min(P(rep >= 0), P(rep <= 0))`` clipped to 1.
    """
    x = np.ascontiguousarray(gaps_post, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("bootstrap needs at least two post-treatment periods")
    if not np.all(np.isfinite(x)):
        raise ValueError("gaps must be finite")
    b = cfg.resolve_block_length(n)
    n_blocks = math.ceil(n / b)
    starts = make_rng(cfg.seed).integers(0, n, size=(cfg.replications, n_blocks), dtype=np.int64)
    kern = get_kernels(backend)
    if n_jobs > 1 and cfg.replications > 1:
        chunks = np.array_split(np.arange(cfg.replications), n_jobs)
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(
                ex.map(lambda idx: kern.circular_block_means(x, np.ascontiguousarray(starts[idx]), b), chunks)
            )
        reps = np.concatenate(parts)
    else:
        reps = kern.circular_block_means(x, starts, b)
    se = float(reps.std(ddof=1)) if reps.size > 1 else 0.0
    lo, hi = np.percentile(reps, [2.5, 97.5])
    p = min(1.0, 2.0 * min(float(np.mean(reps >= 0)), float(np.mean(reps <= 0))))
    return BootstrapResult(se, float(lo), float(hi), p, reps, b, cfg.seed)


def rmspe(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("rmspe of empty series")
    return math.sqrt(float(np.mean(x**2)))


class PerfectPreFitError(EstimationError):
    """Pre-period RMSPE is zero, so the post/pre ratio is undefined."""

    def __init__(self, rmspe_post: float):
        super().__init__(f"perfect pre-fit; ratio undefined (post RMSPE {rmspe_post:.6g})")
        self.rmspe_post = rmspe_post


def rmspe_ratio(gaps_pre, gaps_post) -> float:
    """Post-period RMSPE divided by pre-period RMSPE."""
    pre, post = rmspe(gaps_pre), rmspe(gaps_post)
    if pre == 0.0:
        raise PerfectPreFitError(post)
    return post / pre


@dataclass(frozen=True, eq=False)
class PlaceboResult:
    units: tuple[str, ...]
    ratios: np.ndarray
    treated_unit: str
    p_placebo: float
    failed: tuple[tuple[str, str], ...] = ()

    @property
    def n_evaluated(self) -> int:
        return len(self.units)

    @property
    def treated_rank(self) -> int:
        return int(round(self.p_placebo * self.n_evaluated))

    def as_rows(self) -> list[tuple[str, float, bool]]:
        return [(u, float(r), u == self.treated_unit) for u, r in zip(self.units, self.ratios)]


def _placebo_one(args):
    estimator, panel, spec, outcome = args
    try:
        fit = estimator(panel, spec, outcome)
        return rmspe_ratio(fit.gaps.pre, fit.gaps.post), None
    except Exception as exc:  # noqa: BLE001 - one failed placebo must not sink the run
        return math.nan, f"{type(exc).__name__}: {exc}"


def placebo_in_space(
    panel: PanelDataset,
    spec: TreatmentSpec,
    outcome: str,
    estimator: Callable,
    treated_ratio: float | None = None,
    n_jobs: int = 1,
) -> PlaceboResult:
    """Rank the treated unit's post/pre RMSPE ratio among pseudo-treated donors.

    Every donor is in turn treated as if it received the treatment in the
    same year, with the actual treated unit removed from the pool.
    ``estimator(panel, spec, outcome)`` must return an object with a
    ``gaps`` attribute; for ``n_jobs > 1`` it must be picklable.

    p = (# units with ratio >= treated ratio) / (# units evaluated),
    counting the treated unit itself. Donors whose fit fails are reported
    in ``failed`` and left out of both counts.
    """
    spec.validate(panel)
    donors = spec.donors(panel)
    if len(donors) < 2:
        raise ValueError("placebo inference needs at least two donors")
    if treated_ratio is None:
        fit = estimator(panel, spec, outcome)
        treated_ratio = rmspe_ratio(fit.gaps.pre, fit.gaps.post)
    pool = panel.select_units(donors)
    jobs = [(estimator, pool, TreatmentSpec(d, spec.treatment_year), outcome) for d in donors]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_placebo_one, jobs))
    else:
        results = [_placebo_one(j) for j in jobs]

    units, ratios, failed = [spec.treated_unit], [treated_ratio], []
    for d, (ratio, err) in zip(donors, results):
        if err is None:
            units.append(d)
            ratios.append(ratio)
        else:
            failed.append((d, err))
    if failed:
        warnings.warn(
            f"{len(failed)} placebo fit(s) failed and were excluded: "
            + ", ".join(u for u, _ in failed),
            UserWarning,
            stacklevel=2,
        )
    ratios = np.array(ratios)
    p = float(np.sum(ratios >= treated_ratio)) / len(ratios)
    return PlaceboResult(tuple(units), ratios, spec.treated_unit, p, tuple(failed))


def significance_stars(p: float | None) -> str:
    if p is None or not math.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


@dataclass(frozen=True)
class ATTEstimate:
    """Point effect with bootstrap and placebo inference for one outcome."""

    outcome: str
    method: str
    point: float
    se: float = math.nan
    ci_lower: float = math.nan
    ci_upper: float = math.nan
    p_bootstrap: float = math.nan
    p_placebo: float = math.nan
    rmspe_pre: float = math.nan
    rmspe_post: float = math.nan
    rmspe_ratio: float = math.nan
    regime: str | None = None
    seed: int | None = None
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def stars(self) -> str:
        return significance_stars(self.p_bootstrap)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["stars"] = self.stars
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ATTEstimate:
        d = {k: v for k, v in d.items() if k != "stars"}
        return cls(**{k: (math.nan if v is None and k not in ("regime", "seed") else v) for k, v in d.items()})


def assemble_att(
    outcome: str,
    method: str,
    gaps_pre,
    gaps_post,
    boot: BootstrapResult | None = None,
    placebo: PlaceboResult | None = None,
    regime: str | None = None,
    point: float | None = None,
) -> ATTEstimate:
    """Collect point, bootstrap, placebo and RMSPE diagnostics into one record."""
    gaps_post = np.asarray(gaps_post, dtype=float)
    if point is None:
        point = float(np.mean(gaps_post))
    pre, post = rmspe(gaps_pre), rmspe(gaps_post)
    ratio = post / pre if pre > 0 else math.nan
    return ATTEstimate(
        outcome=outcome,
        method=method,
        point=float(point),
        se=boot.se if boot else math.nan,
        ci_lower=boot.ci_lower if boot else math.nan,
        ci_upper=boot.ci_upper if boot else math.nan,
        p_bootstrap=boot.p_bootstrap if boot else math.nan,
        p_placebo=placebo.p_placebo if placebo else math.nan,
        rmspe_pre=pre,
        rmspe_post=post,
        rmspe_ratio=ratio,
        regime=regime,
        seed=boot.seed if boot else None,
    )


def gap_band(gaps_post: Sequence[float], est: ATTEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Per-year band: each post-year gap shifted by the ATT interval offsets."""
    g = np.asarray(gaps_post, dtype=float)
    return g + (est.ci_lower - est.point), g + (est.ci_upper - est.point)
