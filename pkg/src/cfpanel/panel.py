"""Balanced country-year panels: loading, donor filtering, treatment windows,
and descriptive statistics."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from cfpanel.exceptions import PanelError

__all__ = [
    "EXCLUSION_REASONS",
    "DescriptiveStats",
    "Exclusion",
    "OutcomeStats",
    "PanelDataset",
    "PrePostSplit",
    "TreatmentSpec",
    "describe",
    "filter_donors",
    "load_exclusions",
    "load_panel",
    "panel_from_arrays",
    "split_pre_post",
    "write_panel",
]

PANEL_COLUMNS = ("unit", "year", "outcome", "value")
EXCLUSION_REASONS = ("conflict-peer", "neighbor", "new-state", "micro-state")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Exclusion:
    unit: str
    reason: str


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Unit x year x outcome tensor with an observed-cell mask.

    ``values`` has shape ``(n_units, n_years, n_outcomes)``; unobserved cells
    hold NaN and are flagged ``False`` in ``mask``. Instances are immutable.
    """

    units: tuple[str, ...]
    years: tuple[int, ...]
    outcomes: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray
    exclusion_log: tuple[Exclusion, ...] = field(default=())

    def __post_init__(self):
        shape = (len(self.units), len(self.years), len(self.outcomes))
        if self.values.shape != shape or self.mask.shape != shape:
            raise PanelError(f"values/mask shape must be {shape}")
        if len(set(self.units)) != len(self.units):
            raise PanelError("unit identifiers must be unique")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise PanelError("outcome names must be unique")
        years = list(self.years)
        if not years or years != list(range(years[0], years[0] + len(years))):
            raise PanelError("years must be contiguous increasing integers")
        object.__setattr__(self, "values", _frozen(self.values.astype(float)))
        object.__setattr__(self, "mask", _frozen(self.mask.astype(bool)))

    @property
    def n_cells(self) -> int:
        """Country-year cells per outcome."""
        return len(self.units) * len(self.years)

    def balance_status(self) -> dict[str, bool]:
        return {o: bool(self.mask[:, :, k].all()) for k, o in enumerate(self.outcomes)}

    @property
    def balanced(self) -> bool:
        return bool(self.mask.all())

    def unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise PanelError(f"unknown unit {unit!r}") from None

    def outcome_index(self, outcome: str) -> int:
        try:
            return self.outcomes.index(outcome)
        except ValueError:
            raise PanelError(f"unknown outcome {outcome!r}") from None

    def outcome_matrix(self, outcome: str) -> np.ndarray:
        """Units x years matrix for one outcome (NaN where missing)."""
        return np.array(self.values[:, :, self.outcome_index(outcome)])

    def missing_cells(self, outcome: str) -> list[tuple[str, int]]:
        k = self.outcome_index(outcome)
        rows, cols = np.nonzero(~self.mask[:, :, k])
        return [(self.units[i], self.years[t]) for i, t in zip(rows, cols)]

    def select_units(self, units: Sequence[str]) -> PanelDataset:
        idx = [self.unit_index(u) for u in units]
        return PanelDataset(
            tuple(self.units[i] for i in idx),
            self.years,
            self.outcomes,
            self.values[idx],
            self.mask[idx],
            self.exclusion_log,
        )

    def select_outcomes(self, outcomes: Sequence[str]) -> PanelDataset:
        idx = [self.outcome_index(o) for o in outcomes]
        return PanelDataset(
            self.units,
            self.years,
            tuple(self.outcomes[k] for k in idx),
            self.values[:, :, idx],
            self.mask[:, :, idx],
            self.exclusion_log,
        )

    def equals(self, other: PanelDataset) -> bool:
        """Data-model equality (exclusion log ignored)."""
        return (
            self.units == other.units
            and self.years == other.years
            and self.outcomes == other.outcomes
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def panel_from_arrays(
    units: Sequence[str],
    years: Sequence[int],
    outcomes: Sequence[str],
    values: np.ndarray,
) -> PanelDataset:
    """Build a panel from a dense array; NaN entries become missing cells."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[:, :, None]
    return PanelDataset(
        tuple(str(u) for u in units),
        tuple(int(y) for y in years),
        tuple(str(o) for o in outcomes),
        values,
        ~np.isnan(values),
    )


def _open_text(source) -> tuple[io.TextIOBase, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def load_panel(source) -> PanelDataset:
    """Read a long-format ``unit,year,outcome,value`` file into a panel.

    ``source`` is a path or an open text stream. Empty ``value`` fields and
    absent (unit, year, outcome) combinations are both recorded as missing.

    Raises
    ------
    PanelError
        On a bad header, duplicate cells, non-integer years, non-numeric
        values, or a non-contiguous year set. Row numbers count the header as
        row 1.
    """
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise PanelError("empty input: expected header unit,year,outcome,value") from None
        if tuple(header) != PANEL_COLUMNS:
            raise PanelError(f"header must be {','.join(PANEL_COLUMNS)}, got {','.join(header)}")
        cells: dict[tuple[str, int, str], float] = {}
        first_row: dict[tuple[str, int, str], int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PanelError(f"row {lineno}: expected 4 fields, got {len(row)}")
            unit, year_s, outcome, value_s = (c.strip() for c in row)
            if not unit or not outcome:
                raise PanelError(f"row {lineno}: empty unit or outcome")
            try:
                year = int(year_s)
            except ValueError:
                raise PanelError(f"row {lineno}: year {year_s!r} is not an integer") from None
            if value_s == "":
                value = math.nan
            else:
                try:
                    value = float(value_s)
                except ValueError:
                    raise PanelError(
                        f"row {lineno}: non-numeric value {value_s!r} "
                        f"for ({unit}, {year}, {outcome})"
                    ) from None
                if not math.isfinite(value):
                    raise PanelError(f"row {lineno}: non-finite value {value_s!r}")
            key = (unit, year, outcome)
            if key in cells:
                raise PanelError(
                    f"row {lineno}: duplicate cell ({unit}, {year}, {outcome}), "
                    f"first seen at row {first_row[key]}"
                )
            cells[key] = value
            first_row[key] = lineno
    finally:
        if close:
            fh.close()

    if not cells:
        raise PanelError("input contains no observations")
    units = sorted({k[0] for k in cells})
    outcomes = list(dict.fromkeys(k[2] for k in cells))
    year_set = sorted({k[1] for k in cells})
    years = list(range(year_set[0], year_set[-1] + 1))
    if len(years) != len(year_set):
        gaps = sorted(set(years) - set(year_set))
        raise PanelError(f"year set is not contiguous; missing years {gaps}")

    u_idx = {u: i for i, u in enumerate(units)}
    o_idx = {o: k for k, o in enumerate(outcomes)}
    y0 = years[0]
    values = np.full((len(units), len(years), len(outcomes)), np.nan)
    for (unit, year, outcome), value in cells.items():
        values[u_idx[unit], year - y0, o_idx[outcome]] = value
    return PanelDataset(tuple(units), tuple(years), tuple(outcomes), values, ~np.isnan(values))


def write_panel(panel: PanelDataset, dest) -> None:
    """Write ``panel`` in the long input format; missing cells get an empty value."""
    fh, close = (open(dest, "w", newline="", encoding="utf-8"), True) if isinstance(
        dest, (str, os.PathLike)
    ) else (dest, False)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_COLUMNS)
        for i, unit in enumerate(panel.units):
            for t, year in enumerate(panel.years):
                for k, outcome in enumerate(panel.outcomes):
                    v = panel.values[i, t, k]
                    w.writerow((unit, year, outcome, repr(float(v)) if panel.mask[i, t, k] else ""))
    finally:
        if close:
            fh.close()


def load_exclusions(source) -> list[Exclusion]:
    """Read a ``unit,reason`` exclusion file."""
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header != ["unit", "reason"]:
            raise PanelError("exclusion file header must be unit,reason")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise PanelError(f"exclusions row {lineno}: expected 2 fields")
            out.append(Exclusion(row[0].strip(), row[1].strip()))
        return out
    finally:
        if close:
            fh.close()


def filter_donors(
    panel: PanelDataset,
    exclusions: Iterable[Exclusion | tuple[str, str]],
    treated_unit: str | None = None,
) -> PanelDataset:
    """Drop excluded units from the donor pool and keep a log of why.

    Reason tags must be one of ``EXCLUSION_REASONS``.
    """
    exclusions = [e if isinstance(e, Exclusion) else Exclusion(*e) for e in exclusions]
    if not exclusions:
        return panel
    for e in exclusions:
        if e.unit not in panel.units:
            raise PanelError(f"cannot exclude unknown unit {e.unit!r}")
        if e.reason not in EXCLUSION_REASONS:
            raise PanelError(
                f"unknown exclusion reason {e.reason!r} for {e.unit!r}; "
                f"expected one of {', '.join(EXCLUSION_REASONS)}"
            )
        if treated_unit is not None and e.unit == treated_unit:
            raise PanelError(f"the treated unit {treated_unit!r} cannot be excluded")
    dropped = {e.unit for e in exclusions}
    keep = [u for u in panel.units if u not in dropped]
    n_donors_left = len([u for u in keep if u != treated_unit])
    if n_donors_left == 0 or (treated_unit is None and len(keep) < 2):
        raise PanelError("exclusions remove every donor")
    out = panel.select_units(keep)
    object.__setattr__(out, "exclusion_log", panel.exclusion_log + tuple(exclusions))
    return out


@dataclass(frozen=True)
class TreatmentSpec:
    """Treated unit and first post-treatment year."""

    treated_unit: str
    treatment_year: int

    def validate(self, panel: PanelDataset) -> None:
        if self.treated_unit not in panel.units:
            raise PanelError(f"treated unit {self.treated_unit!r} not in panel")
        if not panel.years[0] < self.treatment_year <= panel.years[-1]:
            raise PanelError(
                f"treatment year {self.treatment_year} must lie in "
                f"({panel.years[0]}, {panel.years[-1]}]"
            )

    def pre_years(self, panel: PanelDataset) -> tuple[int, ...]:
        return tuple(y for y in panel.years if y < self.treatment_year)

    def post_years(self, panel: PanelDataset) -> tuple[int, ...]:
        return tuple(y for y in panel.years if y >= self.treatment_year)

    def donors(self, panel: PanelDataset) -> tuple[str, ...]:
        return tuple(sorted(u for u in panel.units if u != self.treated_unit))


class PrePostSplit(NamedTuple):
    y_pre: np.ndarray
    y_post: np.ndarray
    X_pre: np.ndarray
    X_post: np.ndarray
    donors: tuple[str, ...]
    pre_years: tuple[int, ...]
    post_years: tuple[int, ...]

    @property
    def years(self) -> tuple[int, ...]:
        return self.pre_years + self.post_years

    @property
    def y_full(self) -> np.ndarray:
        return np.concatenate([self.y_pre, self.y_post])

    @property
    def X_full(self) -> np.ndarray:
        return np.vstack([self.X_pre, self.X_post])


MIN_PRE_PERIODS = 5


def split_pre_post(panel: PanelDataset, spec: TreatmentSpec, outcome: str) -> PrePostSplit:
    """Treated pre/post vectors and donor pre/post matrices for one outcome.

    Donor columns are ordered by identifier. Emits a ``UserWarning`` when the
    pre-period is too short for five-fold block cross-validation.
    """
    spec.validate(panel)
    missing = panel.missing_cells(outcome)
    if missing:
        shown = ", ".join(f"({u}, {y})" for u, y in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise PanelError(f"outcome {outcome!r} has missing cells: {shown}{more}")
    Y = panel.outcome_matrix(outcome)
    donors = spec.donors(panel)
    n_pre = spec.treatment_year - panel.years[0]
    treated = Y[panel.unit_index(spec.treated_unit)]
    D = Y[[panel.unit_index(d) for d in donors]].T
    if n_pre < MIN_PRE_PERIODS:
        warnings.warn(
            f"only {n_pre} pre-treatment period(s); block cross-validation needs "
            f"at least {MIN_PRE_PERIODS}",
            UserWarning,
            stacklevel=2,
        )
    return PrePostSplit(
        treated[:n_pre].copy(),
        treated[n_pre:].copy(),
        D[:n_pre].copy(),
        D[n_pre:].copy(),
        donors,
        spec.pre_years(panel),
        spec.post_years(panel),
    )


@dataclass(frozen=True)
class OutcomeStats:
    outcome: str
    treated_pre_mean: float
    treated_pre_std: float
    treated_pre_n: int
    treated_post_mean: float
    treated_post_std: float
    treated_post_n: int
    donor_mean: float
    donor_std: float
    donor_n: int


@dataclass(frozen=True)
class DescriptiveStats:
    treated_unit: str
    treatment_year: int
    n_units: int
    n_years: int
    n_cells: int
    rows: tuple[OutcomeStats, ...]

    def as_dict(self) -> dict:
        return {
            "treated_unit": self.treated_unit,
            "treatment_year": self.treatment_year,
            "n_units": self.n_units,
            "n_years": self.n_years,
            "n_country_years": self.n_cells,
            "outcomes": [r.__dict__.copy() for r in self.rows],
        }


def _mean_std(x: np.ndarray) -> tuple[float, float, int]:
    x = x[~np.isnan(x)]
    n = x.size
    if n == 0:
        return math.nan, math.nan, 0
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if n > 1 else math.nan
    return mean, std, n


def describe(
    panel: PanelDataset, spec: TreatmentSpec, outcomes: Sequence[str] | None = None
) -> DescriptiveStats:
    """Treated pre/post and donor full-period means and sample std devs.

    Missing cells are skipped; the per-cell counts are reported alongside.
    """
    spec.validate(panel)
    outcomes = list(outcomes) if outcomes else list(panel.outcomes)
    n_pre = spec.treatment_year - panel.years[0]
    ti = panel.unit_index(spec.treated_unit)
    donor_idx = [panel.unit_index(d) for d in spec.donors(panel)]
    rows = []
    for outcome in outcomes:
        Y = panel.outcome_matrix(outcome)
        pre = _mean_std(Y[ti, :n_pre])
        post = _mean_std(Y[ti, n_pre:])
        donor = _mean_std(Y[donor_idx].ravel())
        rows.append(OutcomeStats(outcome, *pre, *post, *donor))
    return DescriptiveStats(
        spec.treated_unit,
        spec.treatment_year,
        len(panel.units),
        len(panel.years),
        panel.n_cells,
        tuple(rows),
    )


def stats_from_mapping(d: Mapping) -> DescriptiveStats:
    rows = tuple(OutcomeStats(**r) for r in d["outcomes"])
    return DescriptiveStats(
        d["treated_unit"], d["treatment_year"], d["n_units"], d["n_years"], d["n_country_years"], rows
    )
