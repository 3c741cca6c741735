"""Batch command-line front end.

Usage::

    cfpanel describe --input panel.csv --treated RUS --treatment-year 2011 --out out/
    cfpanel estimate --input panel.csv --treated RUS --treatment-year 2011 \\
        --method mc --regime both --out out/
    cfpanel placebo  --input panel.csv --treated RUS --treatment-year 2011 --method convex --out out/
    cfpanel simulate --out sim/ --monte-carlo 50
    cfpanel report   --results out/results.json --out out/

Settings come from flags, an optional ``--config`` JSON file, and built-in
defaults, in that order of priority. Every command that writes outputs also
writes ``manifest.json`` echoing the resolved settings, the input hashes, the
seed and the toolkit version.

Exit codes: 0 success, 1 estimation failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from cfpanel import __version__
from cfpanel._backend import BACKEND
from cfpanel.dgp import DGPConfig, generate_factor_panel, run_monte_carlo, write_monte_carlo
from cfpanel.estimators import METHODS, Estimator
from cfpanel.exceptions import CFPanelError
from cfpanel.inference import DEFAULT_SEED, RNG_NAME, ATTEstimate, BootstrapConfig, placebo_in_space, rmspe_ratio
from cfpanel.lasso import DEFAULT_LASSO_GRID, PenaltyGrid
from cfpanel.panel import TreatmentSpec, describe, filter_donors, load_exclusions, load_panel, write_panel
from cfpanel.pipeline import AnalysisSettings, estimates_by_regime, finite_or_none, run_analysis
from cfpanel.report import (
    emit_gap_figure,
    render_att_table,
    render_mc_table,
    render_table1,
    render_weight_table,
    text_table,
)

logger = logging.getLogger("cfpanel")

EXIT_OK, EXIT_ESTIMATION, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "input": None,
    "exclusions": None,
    "treated": None,
    "treatment_year": None,
    "outcomes": None,
    "out": None,
    "seed": DEFAULT_SEED,
    "workers": 1,
    "labels": None,
    "method": "lasso",
    "lambda_grid": ",".join(repr(v) for v in DEFAULT_LASSO_GRID.values),
    "folds": 5,
    "regime": "both",
    "mc_grid_points": 20,
    "bootstrap_reps": 1000,
    "block_length": None,
    "placebo": True,
    # simulate
    "n_units": 37,
    "n_years": 33,
    "first_year": 1990,
    "rank": 2,
    "noise_sd": 0.02,
    "effect": -0.75,
    "treatment_index": 21,
    "monte_carlo": 0,
    "mc_methods": "lasso,mc",
    # report
    "results": None,
}


_DATA_KEYS = ("input", "exclusions", "treated", "treatment_year", "outcomes", "out", "seed", "workers", "labels")
_METHOD_KEYS = ("method", "lambda_grid", "folds", "regime", "mc_grid_points")
COMMAND_KEYS = {
    "describe": _DATA_KEYS,
    "estimate": _DATA_KEYS + _METHOD_KEYS + ("bootstrap_reps", "block_length", "placebo"),
    "placebo": _DATA_KEYS + _METHOD_KEYS,
    "simulate": (
        "out", "seed", "workers", "n_units", "n_years", "first_year", "rank", "noise_sd",
        "effect", "treatment_index", "monte_carlo", "mc_methods", "bootstrap_reps",
    ),
    "report": ("out", "seed", "labels", "results"),
}


class _Fail(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="JSON file of settings; command-line flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help=f"seed for every randomized step (default {DEFAULT_SEED})")
    p.add_argument("-v", "--verbose", action="store_true")
    if not data:
        return
    p.add_argument("--input", help="long-format panel file: unit,year,outcome,value")
    p.add_argument("--exclusions", help="donor exclusion file: unit,reason")
    p.add_argument("--treated", help="treated unit identifier")
    p.add_argument("--treatment-year", type=int, help="first post-treatment year")
    p.add_argument("--outcomes", help="comma-separated outcome names (default: all)")
    p.add_argument("--workers", type=int, help="parallel worker processes (default 1)")


def _method_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--lambda-grid", help="comma-separated LASSO penalties (default 0.01,0.05,0.1,0.2,0.5)")
    p.add_argument("--folds", type=int, help="blocked cross-validation folds (default 5)")
    p.add_argument("--regime", choices=("low", "high", "both"), help="matrix-completion shrinkage regime")
    p.add_argument("--mc-grid-points", type=int, help="matrix-completion penalty grid size (default 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfpanel", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="descriptive statistics for treated unit and donor pool")
    _common(p)

    p = sub.add_parser("estimate", help="ATT with bootstrap and placebo inference for each outcome")
    _common(p)
    _method_args(p)
    p.add_argument("--bootstrap-reps", type=int, help="bootstrap replications (default 1000)")
    p.add_argument("--block-length", type=int, help="bootstrap block length (default ceil(sqrt(post years)))")
    p.add_argument("--placebo", dest="placebo", action="store_true", default=None)
    p.add_argument("--no-placebo", dest="placebo", action="store_false")

    p = sub.add_parser("placebo", help="placebo-in-space distribution of post/pre RMSPE ratios")
    _common(p)
    _method_args(p)

    p = sub.add_parser("simulate", help="write a simulated factor panel, optionally a Monte Carlo table")
    _common(p, data=False)
    p.add_argument("--n-units", type=int)
    p.add_argument("--n-years", type=int)
    p.add_argument("--first-year", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--effect", type=float)
    p.add_argument("--treatment-index", type=int, help="index of the first treated year (default 21)")
    p.add_argument("--monte-carlo", type=int, metavar="N", help="also run N seeds of a Monte Carlo study")
    p.add_argument("--mc-methods", help="estimators for the Monte Carlo study (default lasso,mc)")
    p.add_argument("--bootstrap-reps", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("report", help="re-render tables from a results.json file")
    _common(p, data=False)
    p.add_argument("--results", help="results.json written by estimate")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except FileNotFoundError:
            raise _Fail(EXIT_CONFIG, f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise _Fail(EXIT_CONFIG, f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(from_file, dict):
            raise _Fail(EXIT_CONFIG, "config file must hold a JSON object")
        unknown = sorted(set(k.replace("-", "_") for k in from_file) - set(DEFAULTS))
        if unknown:
            raise _Fail(EXIT_CONFIG, f"unknown config keys: {', '.join(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in from_file.items()})
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    cfg["config"] = getattr(args, "config", None)
    return cfg


def _outcome_list(cfg, panel) -> list[str]:
    sel = cfg["outcomes"]
    if not sel:
        return list(panel.outcomes)
    if isinstance(sel, str):
        sel = [s.strip() for s in sel.split(",") if s.strip()]
    missing = [o for o in sel if o not in panel.outcomes]
    if missing:
        raise _Fail(EXIT_CONFIG, f"unknown outcome(s): {', '.join(missing)}")
    return list(sel)


def _grid(cfg) -> PenaltyGrid:
    g = cfg["lambda_grid"]
    try:
        return PenaltyGrid.parse(g) if isinstance(g, str) else PenaltyGrid(tuple(float(x) for x in g))
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, f"bad --lambda-grid: {exc}") from None


def _settings(cfg, with_inference: bool = True) -> AnalysisSettings:
    regimes = ("low", "high") if cfg["regime"] == "both" else (cfg["regime"],)
    try:
        boot = BootstrapConfig(int(cfg["bootstrap_reps"]), cfg["block_length"], int(cfg["seed"]))
        return AnalysisSettings(
            method=cfg["method"],
            grid=_grid(cfg),
            folds=int(cfg["folds"]),
            regimes=regimes,
            n_points=int(cfg["mc_grid_points"]),
            bootstrap=boot,
            placebo=bool(cfg["placebo"]) and with_inference,
        )
    except (ValueError, TypeError) as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None


def _need(cfg, *keys):
    missing = ["--" + k.replace("_", "-") for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise _Fail(EXIT_CONFIG, f"missing required setting(s): {', '.join(missing)}")


def _load(cfg):
    """Panel, treatment spec and outcome list from the resolved config."""
    _need(cfg, "input", "treated", "treatment_year", "out")
    if not os.path.isfile(cfg["input"]):
        raise _Fail(EXIT_CONFIG, f"input file not found: {cfg['input']}")
    panel = load_panel(cfg["input"])
    spec = TreatmentSpec(str(cfg["treated"]), int(cfg["treatment_year"]))
    spec.validate(panel)
    if cfg["exclusions"]:
        if not os.path.isfile(cfg["exclusions"]):
            raise _Fail(EXIT_CONFIG, f"exclusion file not found: {cfg['exclusions']}")
        panel = filter_donors(panel, load_exclusions(cfg["exclusions"]), spec.treated_unit)
    return panel, spec, _outcome_list(cfg, panel)


def _labels(cfg) -> dict:
    lab = cfg.get("labels")
    if lab is None:
        return {}
    if isinstance(lab, dict):
        return {str(k): str(v) for k, v in lab.items()}
    raise _Fail(EXIT_CONFIG, "labels must be a JSON object mapping outcome to display label")


# --------------------------------------------------------------------------
# output helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "outcome"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return finite_or_none(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_table(out: Path, stem: str, csv_text: str) -> None:
    (out / f"{stem}.csv").write_text(csv_text, encoding="utf-8")
    (out / f"{stem}.txt").write_text(text_table(csv_text), encoding="utf-8")


def _manifest(out: Path, cfg: dict, outputs: list[str]) -> None:
    inputs = {}
    for key in ("input", "exclusions", "results", "config"):
        p = cfg.get(key)
        if p and os.path.isfile(p):
            inputs[key] = {"path": str(p), "sha256": _sha256(p)}
    resolved = {k: cfg[k] for k in COMMAND_KEYS[cfg["command"]]}
    _write_json(
        out / "manifest.json",
        {
            "toolkit": "cfpanel",
            "version": __version__,
            "command": cfg["command"],
            "config": resolved,
            "seed": cfg["seed"],
            "rng": RNG_NAME,
            "kernel_backend": BACKEND,
            "inputs": inputs,
            "outputs": sorted(outputs),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    )


def _outdir(cfg) -> Path:
    _need(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_describe(cfg) -> int:
    panel, spec, outcomes = _load(cfg)
    out = _outdir(cfg)
    stats = describe(panel, spec, outcomes)
    table = render_table1(stats, _labels(cfg))
    _write_table(out, "table1", table)
    _write_json(out / "describe.json", stats.as_dict())
    _manifest(out, cfg, ["table1.csv", "table1.txt", "describe.json"])
    print(text_table(table), end="")
    return EXIT_OK


def _weights_map(results) -> dict:
    return {
        r.outcome: r.results["high"].fit.weights.as_dict()
        for r in results
        if r.ok and r.results["high"].fit.weights is not None
    }


def _render_estimates(out: Path, method: str, by_regime: dict, labels: dict, weights: dict) -> list[str]:
    files = []
    if method == "mc":
        table = render_mc_table(by_regime.get("low"), by_regime.get("high"), labels)
    else:
        table = render_att_table(by_regime["high"], labels)
    _write_table(out, "att_table", table)
    files += ["att_table.csv", "att_table.txt"]
    if weights:
        _write_table(out, "weights", render_weight_table(weights, labels))
        files += ["weights.csv", "weights.txt"]
    return files


def cmd_estimate(cfg) -> int:
    settings = _settings(cfg)
    panel, spec, outcomes = _load(cfg)
    out = _outdir(cfg)
    labels = _labels(cfg)
    results = run_analysis(panel, spec, outcomes, settings, workers=int(cfg["workers"]))

    files = []
    (out / "gaps").mkdir(exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    if settings.placebo:
        (out / "placebo").mkdir(exist_ok=True)
    record = {"method": settings.method, "estimates": [], "errors": {}, "diagnostics": {}}
    for r in results:
        if not r.ok:
            record["errors"][r.outcome] = r.error
            print(f"error: {r.outcome}: {r.error}", file=sys.stderr)
            continue
        diag = {}
        if r.regimes is not None:
            diag["regimes"] = r.regimes.as_dict()
        for regime, rr in r.results.items():
            stem = _slug(r.outcome) + (f"_{regime}" if settings.method == "mc" else "")
            emit_gap_figure(
                rr.fit.gaps,
                rr.band_lower,
                rr.band_upper,
                out / "figures" / f"{stem}.svg",
                out / "gaps" / f"{stem}.csv",
                title=labels.get(r.outcome, r.outcome),
            )
            files += [f"figures/{stem}.svg", f"gaps/{stem}.csv"]
            if rr.placebo is not None:
                _write_placebo(out / "placebo" / f"{stem}.csv", rr.placebo)
                files.append(f"placebo/{stem}.csv")
            if "cv" in rr.fit.info:
                diag["cv"] = rr.fit.info["cv"].as_dict()
            record["estimates"].append(rr.estimate.as_dict())
        if diag:
            record["diagnostics"][r.outcome] = diag

    by_regime = estimates_by_regime(results)
    if by_regime:
        files += _render_estimates(out, settings.method, by_regime, labels, _weights_map(results))
        print(text_table((out / "att_table.csv").read_text(encoding="utf-8")), end="")
    record["labels"] = labels
    _write_json(out / "results.json", record)
    files.append("results.json")
    _manifest(out, cfg, files)
    if record["errors"]:
        print(f"{len(record['errors'])} of {len(outcomes)} outcome(s) failed", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def _write_placebo(path: Path, res) -> None:
    lines = ["unit,ratio,treated"]
    for u, ratio, treated in res.as_rows():
        lines.append(f"{u},{ratio!r},{int(treated)}")
    for u, err in res.failed:
        lines.append(f"{u},,0")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_placebo(cfg) -> int:
    settings = _settings(cfg, with_inference=False)
    panel, spec, outcomes = _load(cfg)
    if len(spec.donors(panel)) < 2:
        raise _Fail(EXIT_CONFIG, "placebo needs at least two donors")
    out = _outdir(cfg)
    files, summary, failed = [], {}, {}
    for outcome in outcomes:
        for regime in settings.regimes:
            est = settings.estimator(regime)
            key = outcome + (f"_{regime}" if settings.method == "mc" else "")
            try:
                fit = est(panel, spec, outcome)
                ratio = rmspe_ratio(fit.gaps.pre, fit.gaps.post)
                res = placebo_in_space(
                    panel, spec, outcome, est.for_placebo(fit), ratio, n_jobs=int(cfg["workers"])
                )
            except CFPanelError as exc:
                failed[key] = str(exc)
                print(f"error: {key}: {exc}", file=sys.stderr)
                continue
            stem = _slug(key)
            _write_placebo(out / f"placebo_{stem}.csv", res)
            files.append(f"placebo_{stem}.csv")
            summary[key] = {
                "p_placebo": res.p_placebo,
                "treated_ratio": ratio,
                "rank": res.treated_rank,
                "n_units": res.n_evaluated,
                "failed": dict(res.failed),
            }
            print(f"{key}: ratio {ratio:.3f}, rank {res.treated_rank} of {res.n_evaluated}, p = {res.p_placebo:.3f}")
    _write_json(out / "placebo.json", {"method": settings.method, "outcomes": summary, "errors": failed})
    files.append("placebo.json")
    _manifest(out, cfg, files)
    return EXIT_ESTIMATION if failed else EXIT_OK


def cmd_simulate(cfg) -> int:
    out = _outdir(cfg)
    try:
        dgp = DGPConfig(
            n_units=int(cfg["n_units"]),
            n_years=int(cfg["n_years"]),
            first_year=int(cfg["first_year"]),
            rank=int(cfg["rank"]),
            noise_sd=float(cfg["noise_sd"]),
            effect=float(cfg["effect"]),
            treatment_index=int(cfg["treatment_index"]),
            seed=int(cfg["seed"]),
        )
    except (ValueError, TypeError) as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    sim = generate_factor_panel(dgp)
    write_panel(sim.panel, out / "panel.csv")
    truth = {
        "treated_unit": sim.spec.treated_unit,
        "treatment_year": sim.spec.treatment_year,
        "true_att": sim.true_att,
    }
    _write_json(out / "truth.json", truth)
    files = ["panel.csv", "truth.json"]
    n_mc = int(cfg["monte_carlo"])
    if n_mc > 0:
        names = [m.strip() for m in str(cfg["mc_methods"]).split(",") if m.strip()]
        bad = [m for m in names if m not in METHODS]
        if bad:
            raise _Fail(EXIT_CONFIG, f"unknown Monte Carlo method(s): {', '.join(bad)}")
        estimators = {m: Estimator(m) for m in names}
        rows = run_monte_carlo(
            [replace(dgp, label="default")],
            estimators,
            n_mc,
            bootstrap=BootstrapConfig(int(cfg["bootstrap_reps"]), None, int(cfg["seed"])),
            base_seed=int(cfg["seed"]),
        )
        write_monte_carlo(rows, out / "monte_carlo.csv")
        _write_json(out / "monte_carlo.json", [r.as_dict() for r in rows])
        files += ["monte_carlo.csv", "monte_carlo.json"]
        for r in rows:
            print(
                f"{r.estimator}: mean ATT {r.mean_att:.4f} (true {r.true_att:.4f}), "
                f"RMSE {r.rmse:.4f}, coverage {r.coverage:.3f}, failed {r.n_failed}"
            )
    print(f"wrote {out / 'panel.csv'} (treated {sim.spec.treated_unit} from {sim.spec.treatment_year})")
    _manifest(out, cfg, files)
    return EXIT_OK


def cmd_report(cfg) -> int:
    _need(cfg, "results")
    if not os.path.isfile(cfg["results"]):
        raise _Fail(EXIT_CONFIG, f"results file not found: {cfg['results']}")
    with open(cfg["results"], encoding="utf-8") as fh:
        record = json.load(fh)
    out = _outdir(cfg)
    ests = [ATTEstimate.from_dict(d) for d in record["estimates"]]
    by_regime: dict[str, list] = {}
    for e in ests:
        by_regime.setdefault(e.regime or "high", []).append(e)
    labels = _labels(cfg) or record.get("labels", {})
    weights = {e.outcome: e.extras["weights"] for e in ests if "weights" in e.extras}
    if not ests:
        raise _Fail(EXIT_ESTIMATION, "results file holds no estimates")
    files = _render_estimates(out, record["method"], by_regime, labels, weights)
    _manifest(out, cfg, files)
    print(text_table((out / "att_table.csv").read_text(encoding="utf-8")), end="")
    return EXIT_OK


COMMANDS = {
    "describe": cmd_describe,
    "estimate": cmd_estimate,
    "placebo": cmd_placebo,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CFPanelError, ValueError) as exc:
        # input and configuration problems surface as ValueError subclasses
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION if isinstance(exc, CFPanelError) and not isinstance(exc, ValueError) else EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
