import pickle

import numpy as np
import pytest

from cfpanel.dgp import DGPConfig, generate_factor_panel
from cfpanel.estimators import Estimator
from cfpanel.inference import BootstrapConfig
from cfpanel.panel import panel_from_arrays
from cfpanel.pipeline import AnalysisSettings, estimates_by_regime, run_analysis, run_outcome


def two_outcome_sim(seed=0):
    a = generate_factor_panel(DGPConfig(seed=seed, n_units=10))
    b = generate_factor_panel(DGPConfig(seed=seed + 1, n_units=10, effect=0.0))
    vals = np.stack([a.panel.outcome_matrix("y"), b.panel.outcome_matrix("y")], axis=2)
    return panel_from_arrays(a.panel.units, a.panel.years, ["gdp", "trade"], vals), a.spec


class TestEstimator:
    def test_validation(self):
        with pytest.raises(ValueError):
            Estimator("ridge")
        with pytest.raises(ValueError):
            Estimator("mc", regime="medium")
        with pytest.raises(ValueError):
            Estimator("lasso", folds=1)

    def test_picklable(self):
        e = Estimator("mc", regime="low")
        assert pickle.loads(pickle.dumps(e)) == e

    def test_mc_placebo_reuses_treated_penalty(self):
        sim = generate_factor_panel(DGPConfig(n_units=8, seed=3))
        est = Estimator("mc", regime="low")
        fit = est(sim.panel, sim.spec, "y")
        pest = est.for_placebo(fit)
        assert pest.lam == fit.info["regimes"].lam_low
        refit = pest(sim.panel, sim.spec, "y")
        assert np.allclose(refit.gaps.gap, fit.gaps.gap, atol=1e-12)

    def test_scm_placebo_is_same_config(self):
        e = Estimator("lasso")
        assert e.for_placebo(None) is e


class TestPipeline:
    def test_mc_both_regimes_share_cv(self):
        panel, spec = two_outcome_sim()
        s = AnalysisSettings("mc", regimes=("low", "high"), bootstrap=BootstrapConfig(200), placebo=False)
        r = run_outcome(panel, spec, "gdp", s)
        assert r.ok and set(r.results) == {"low", "high"}
        assert r.results["low"].fit.info["regimes"] is r.results["high"].fit.info["regimes"]
        assert r.results["low"].estimate.regime == "low"

    def test_scm_ignores_regime(self):
        s = AnalysisSettings("convex", regimes=("low", "high"))
        assert s.regimes == ("high",)

    def test_errors_are_captured(self):
        panel, spec = two_outcome_sim()
        vals = np.array(panel.values)
        vals[3, 4, 1] = np.nan
        panel = panel_from_arrays(panel.units, panel.years, panel.outcomes, vals)
        res = run_analysis(panel, spec, ["gdp", "trade"], AnalysisSettings("convex", placebo=False))
        assert res[0].ok and not res[1].ok
        assert "missing cells" in res[1].error

    def test_workers_do_not_change_results(self):
        panel, spec = two_outcome_sim(5)
        s = AnalysisSettings("lasso", bootstrap=BootstrapConfig(300, seed=11), placebo=True)
        serial = run_analysis(panel, spec, ["gdp", "trade"], s)
        parallel = run_analysis(panel, spec, ["gdp", "trade"], s, workers=2)
        for a, b in zip(serial, parallel):
            assert a.results["high"].estimate == b.results["high"].estimate
        by = estimates_by_regime(serial)
        assert [e.outcome for e in by["high"]] == ["gdp", "trade"]

    def test_one_post_year_skips_bootstrap(self):
        sim = generate_factor_panel(DGPConfig(n_units=6, n_years=12, treatment_index=11))
        r = run_outcome(sim.panel, sim.spec, "y", AnalysisSettings("convex", placebo=False))
        assert r.ok
        rr = r.results["high"]
        assert np.isnan(rr.estimate.se)
        assert rr.band_lower.tolist() == rr.fit.gaps.post.tolist()
