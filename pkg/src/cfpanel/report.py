"""Table renderers and gap figures.

Renderers are pure functions from result objects to CSV text, so their output
can be compared byte-for-byte against checked-in golden files. Number
formatting follows the conventions of published synthetic-control tables:
three decimals with the leading zero dropped for effects (``-.756``), signed
effects, stars from the bootstrap p-value, and two-decimal donor weights with
``<0.01`` for tiny nonzero weights.
"""

from __future__ import annotations

import csv
import io
import math
import os
from typing import Mapping, Sequence

import numpy as np

from cfpanel.inference import ATTEstimate
from cfpanel.panel import DescriptiveStats
from cfpanel.scm import GapSeries

__all__ = [
    "emit_gap_figure",
    "fmt_effect",
    "fmt_weight",
    "render_att_table",
    "render_mc_table",
    "render_table1",
    "render_weight_table",
    "text_table",
]


def _csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _strip0(s: str) -> str:
    if s.startswith("0."):
        return s[1:]
    if s.startswith("-0."):
        return "-" + s[2:]
    if s.startswith("+0."):
        return "+" + s[2:]
    return s


def fmt_num(x: float, digits: int = 3, sign: bool = False, lead_zero: bool = False) -> str:
    if x is None or not math.isfinite(x):
        return ""
    if x == 0:
        x = 0.0  # no "-0.000"
    s = f"{x:+.{digits}f}" if sign else f"{x:.{digits}f}"
    if s.lstrip("+-") == f"{0:.{digits}f}":
        s = s.lstrip("+-") if not sign else "+" + s.lstrip("+-")
    return s if lead_zero else _strip0(s)


def fmt_effect(est: ATTEstimate) -> str:
    """``-.756*** (.028)``"""
    s = fmt_num(est.point, sign=est.point > 0) + est.stars
    if math.isfinite(est.se):
        s += f" ({fmt_num(est.se)})"
    return s


def fmt_interval(lo: float, hi: float, braces: str = "{}") -> str:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return ""
    return f"{braces[0]}{fmt_num(lo)}, {fmt_num(hi)}{braces[1]}"


def fmt_p(p: float) -> str:
    return fmt_num(p, 3, lead_zero=True)


def fmt_weight(w: float) -> str:
    """Two decimals; exact zero as ``0`` and magnitudes below 0.005 as ``<0.01``."""
    if w == 0:
        return "0"
    if abs(w) < 0.005:
        return "<0.01"
    s = f"{w:.2f}"
    return "0" if s in ("0.00", "-0.00") else s


def render_table1(stats: DescriptiveStats, labels: Mapping[str, str] | None = None) -> str:
    """Treated pre/post and donor-pool means and standard deviations."""
    labels = labels or {}
    unit = stats.treated_unit
    rows = [
        ["", f"{unit} before {stats.treatment_year}", "", f"{unit} from {stats.treatment_year}", "", "Donor pool", ""],
        ["Outcome", "Mean", "Std", "Mean", "Std", "Mean (Full)", "Std (Full)"],
    ]
    for r in stats.rows:
        rows.append(
            [
                labels.get(r.outcome, r.outcome),
                fmt_num(r.treated_pre_mean, lead_zero=True),
                fmt_num(r.treated_pre_std, lead_zero=True),
                fmt_num(r.treated_post_mean, lead_zero=True),
                fmt_num(r.treated_post_std, lead_zero=True),
                fmt_num(r.donor_mean, lead_zero=True),
                fmt_num(r.donor_std, lead_zero=True),
            ]
        )
    rows.append(
        [
            f"Notes: {stats.n_units} units x {stats.n_years} years = "
            f"{stats.n_cells:,} country-year observations per outcome."
        ]
    )
    return _csv(rows)


def _att_block(ests: Sequence[ATTEstimate], braces: str, with_ratio: bool) -> list[list[str]]:
    rows = [
        ["ATT"] + [fmt_effect(e) for e in ests],
        ["Empirical 95% confidence interval"] + [fmt_interval(e.ci_lower, e.ci_upper, braces) for e in ests],
    ]
    if with_ratio:
        rows.append(["Post/Pre RMSPE ratio"] + [fmt_num(e.rmspe_ratio, lead_zero=True) for e in ests])
    rows.append(["Simulation-based p-value (bootstrap)"] + [fmt_p(e.p_bootstrap) for e in ests])
    rows.append(["Placebo rank p-value"] + [fmt_p(e.p_placebo) for e in ests])
    return rows


def _header(outcomes: Sequence[str], labels: Mapping[str, str] | None) -> list[list[str]]:
    labels = labels or {}
    return [
        [""] + [labels.get(o, o) for o in outcomes],
        [""] + [f"({i})" for i in range(1, len(outcomes) + 1)],
    ]


def render_mc_table(
    low: Sequence[ATTEstimate] | None,
    high: Sequence[ATTEstimate] | None,
    labels: Mapping[str, str] | None = None,
) -> str:
    """Matrix-completion effects, one panel per shrinkage regime."""
    panels = [(p, e) for p, e in (("Panel A: low shrinkage", low), ("Panel B: high shrinkage", high)) if e]
    if not panels:
        raise ValueError("no estimates to render")
    outcomes = [e.outcome for e in panels[0][1]]
    rows = _header(outcomes, labels)
    for title, ests in panels:
        if [e.outcome for e in ests] != outcomes:
            raise ValueError("both panels must cover the same outcomes in the same order")
        rows.append([title])
        rows.extend(_att_block(ests, "{}", with_ratio=True))
    rows.append(["Stars: *** p<0.01, ** p<0.05, * p<0.10 (bootstrap p-value)."])
    return _csv(rows)


def render_att_table(ests: Sequence[ATTEstimate], labels: Mapping[str, str] | None = None) -> str:
    """Synthetic-control effects, one column per outcome."""
    if not ests:
        raise ValueError("no estimates to render")
    rows = _header([e.outcome for e in ests], labels)
    rows.extend(_att_block(ests, "()", with_ratio=True))
    rows.append(["Stars: *** p<0.01, ** p<0.05, * p<0.10 (bootstrap p-value)."])
    return _csv(rows)


def render_weight_table(
    weights: Mapping[str, Mapping[str, float]],
    labels: Mapping[str, str] | None = None,
) -> str:
    """Donors as rows, outcomes as columns.

    ``weights`` maps outcome -> {donor: weight}; a donor absent from an
    outcome's fit is shown as ``0``.
    """
    labels = labels or {}
    outcomes = list(weights)
    donors = sorted({d for w in weights.values() for d in w})
    rows = [["Donor"] + [labels.get(o, o) for o in outcomes]]
    for d in donors:
        rows.append([d] + [fmt_weight(weights[o].get(d, 0.0)) for o in outcomes])
    return _csv(rows)


def text_table(csv_text: str) -> str:
    """Column-aligned plain-text view of a rendered CSV table."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    ncol = max(len(r) for r in rows)
    body = [r for r in rows if len(r) > 1]
    widths = [max((len(r[i]) for r in body if i < len(r)), default=0) for i in range(ncol)]
    out = []
    for r in rows:
        if len(r) == 1:
            out.append(r[0])
        else:
            out.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
    return "\n".join(out) + "\n"


def emit_gap_figure(
    gaps: GapSeries,
    band_lower,
    band_upper,
    svg_path: str | os.PathLike,
    data_path: str | os.PathLike,
    title: str = "",
) -> None:
    """Observed vs synthetic series and the post-period gap with its band.

    ``band_lower``/``band_upper`` cover the post-treatment years. Writes an SVG
    and a CSV with the plotted numbers so other tools can redraw it.
    """
    lo = np.asarray(band_lower, dtype=float)
    hi = np.asarray(band_upper, dtype=float)
    post_years = gaps.post_years
    if lo.shape != (len(post_years),) or hi.shape != lo.shape:
        raise ValueError(
            f"band has {lo.shape[0] if lo.ndim else 0} points for {len(post_years)} post-treatment years"
        )

    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "observed", "synthetic", "gap", "band_lower", "band_upper"])
        for t, year in enumerate(gaps.years):
            k = t - gaps.n_pre
            band = [repr(float(lo[k])), repr(float(hi[k]))] if k >= 0 else ["", ""]
            w.writerow(
                [year, repr(float(gaps.observed[t])), repr(float(gaps.synthetic[t])), repr(float(gaps.gap[t]))]
                + band
            )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cfpanel"
    years = np.asarray(gaps.years)
    t1 = post_years[0] if post_years else years[-1]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(years, gaps.observed, color="black", lw=1.5, label="Observed")
    ax1.plot(years, gaps.synthetic, color="tab:blue", lw=1.5, ls="--", label="Synthetic")
    ax1.legend(frameon=False)
    ax2.plot(years, gaps.gap, color="black", lw=1.2)
    px = np.asarray(post_years)
    if px.size == 1:
        g = gaps.post[0]
        ax2.errorbar(px, [g], yerr=[[g - lo[0]], [hi[0] - g]], fmt="o", color="tab:red", capsize=4)
    elif px.size > 1:
        ax2.fill_between(px, lo, hi, color="tab:red", alpha=0.25, lw=0, label="95% band")
        ax2.legend(frameon=False)
    for ax in (ax1, ax2):
        ax.axvline(t1 - 0.5, color="grey", lw=0.8, ls=":")
    ax2.axhline(0.0, color="grey", lw=0.8)
    ax2.set_ylabel("Gap")
    ax2.set_xlabel("Year")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
