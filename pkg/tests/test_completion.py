import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfpanel.completion import (
    CompletionProblem,
    _objective,
    build_penalty_grid,
    complete_treated,
    estimate_att_mc,
    mc_lambda_max,
    select_regimes,
    soft_impute,
    soft_impute_path,
    split_regimes,
)
from cfpanel.dgp import DGPConfig, generate_factor_panel
from cfpanel.lasso import PenaltyGrid
from cfpanel.panel import TreatmentSpec, panel_from_arrays


def low_rank(seed, n=20, t=20, rank=1):
    r = np.random.default_rng(seed)
    return r.normal(size=(n, rank)) @ r.normal(size=(rank, t)) + 3.0


def random_mask(seed, shape, frac=0.1):
    r = np.random.default_rng(seed + 1000)
    while True:
        obs = r.random(shape) >= frac
        if obs.any(axis=0).all() and obs.any(axis=1).all():
            return obs


class TestProblem:
    def test_empty_row_rejected(self):
        obs = np.ones((3, 4), dtype=bool)
        obs[1] = False
        with pytest.raises(ValueError, match="rows"):
            CompletionProblem(np.zeros((3, 4)), obs)

    def test_empty_column_rejected(self):
        obs = np.ones((3, 4), dtype=bool)
        obs[:, 2] = False
        with pytest.raises(ValueError, match="columns"):
            CompletionProblem(np.zeros((3, 4)), obs)

    def test_from_panel_masks_treated_post(self):
        sim = generate_factor_panel(DGPConfig(n_units=5, n_years=10, treatment_index=6, seed=1))
        prob = CompletionProblem.from_panel(sim.panel, sim.spec, "y")
        masked = np.argwhere(~prob.observed)
        assert masked.tolist() == [[0, t] for t in range(6, 10)]


class TestSoftImpute:
    def test_lambda_max_gives_zero_L(self):
        Y = low_rank(0, rank=2)
        prob = CompletionProblem(Y, random_mask(0, Y.shape))
        res = soft_impute(prob, mc_lambda_max(prob))
        assert np.abs(res.L).max() < 1e-10
        assert res.rank == 0
        assert soft_impute(prob, 0.9 * mc_lambda_max(prob)).rank >= 1

    def test_rank_one_single_masked_cell(self):
        r = np.random.default_rng(3)
        u, v = r.normal(size=8) + 2, r.normal(size=9) + 2
        Y = np.outer(u, v)
        obs = np.ones_like(Y, dtype=bool)
        obs[2, 5] = False
        prob = CompletionProblem(Y, obs, fe_mode="none")
        lams = list(mc_lambda_max(prob) * np.logspace(0, -6, 13)) + [1e-6]
        res = soft_impute_path(prob, lams, tol=1e-10, max_iter=5000)[1e-6]
        assert res.fitted[2, 5] == pytest.approx(u[2] * v[5], abs=1e-3)

    @pytest.mark.parametrize("rank", [1, 2])
    def test_low_rank_recovery_at_smallest_grid_value(self, rank):
        for seed in range(3):
            Y = low_rank(seed, rank=rank)
            obs = random_mask(seed, Y.shape)
            prob = CompletionProblem(Y, obs)
            grid = build_penalty_grid(prob)
            res = soft_impute_path(prob, grid.values)[grid.values[0]]
            err = np.linalg.norm((res.fitted - Y)[~obs]) / np.linalg.norm(Y[~obs])
            assert err < 1e-3

    @given(st.integers(0, 10_000), st.sampled_from([1e-4, 1e-2, 1.0, 100.0]))
    def test_additive_matrix_exact(self, seed, lam):
        r = np.random.default_rng(seed)
        Y = r.normal(size=(7, 1)) * 5 + r.normal(size=(1, 9))
        prob = CompletionProblem(Y, random_mask(seed, Y.shape, 0.2))
        res = soft_impute(prob, lam)
        assert np.abs(res.fitted - Y).max() < 1e-6
        assert np.abs(res.L).max() < 1e-6

    def test_objective_monotone(self):
        Y = low_rank(4, rank=2) + np.random.default_rng(4).normal(0, 0.1, (20, 20))
        prob = CompletionProblem(Y, random_mask(4, Y.shape))
        h = np.array(soft_impute(prob, 0.01 * mc_lambda_max(prob)).objective_history)
        assert np.all(np.diff(h) <= 1e-12 * h[0])

    def test_nuclear_norm_and_rank_monotone_in_lambda(self):
        Y = low_rank(5, rank=3) + np.random.default_rng(5).normal(0, 0.2, (20, 20))
        prob = CompletionProblem(Y, random_mask(5, Y.shape))
        grid = build_penalty_grid(prob, 12)
        path = soft_impute_path(prob, grid.values, tol=1e-9, max_iter=5000)
        norms = [path[lam].nuclear_norm for lam in grid.values]
        ranks = [path[lam].rank for lam in grid.values]
        assert all(a >= b - 1e-6 * norms[0] for a, b in zip(norms, norms[1:]))
        assert all(a >= b for a, b in zip(ranks, ranks[1:]))
        assert ranks[-1] == 0

    def test_fully_observed_objective_matches_direct_evaluation(self):
        Y = low_rank(6, rank=2)
        prob = CompletionProblem(Y, np.ones_like(Y, dtype=bool))
        lam = 0.05 * mc_lambda_max(prob)
        res = soft_impute(prob, lam)
        direct = np.mean((Y - res.fitted) ** 2) + lam * np.linalg.svd(res.L, compute_uv=False).sum()
        assert res.objective == pytest.approx(direct, rel=1e-12)
        assert res.objective == pytest.approx(_objective(prob, res.L, res.unit_effects, res.time_effects, lam))

    def test_iteration_cap_flags(self):
        Y = low_rank(7, rank=2)
        prob = CompletionProblem(Y, random_mask(7, Y.shape))
        res = soft_impute(prob, 1e-6, max_iter=3)
        assert not res.converged and res.n_iter == 3 and np.isfinite(res.objective)

    def test_negative_lambda_rejected(self):
        prob = CompletionProblem(np.ones((2, 2)), np.ones((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            soft_impute(prob, -1.0)


class TestGrid:
    def test_shape_and_endpoints(self):
        Y = low_rank(8, rank=2)
        prob = CompletionProblem(Y, random_mask(8, Y.shape))
        g = build_penalty_grid(prob)
        assert len(g) == 20
        assert g.values[-1] == mc_lambda_max(prob)
        assert g.values[0] == pytest.approx(g.values[-1] * 1e-4)
        assert all(b > a for a, b in zip(g.values, g.values[1:]))

    def test_singleton(self):
        prob = CompletionProblem(low_rank(9), np.ones((20, 20), dtype=bool), fe_mode="none")
        assert build_penalty_grid(prob, 1).values == (mc_lambda_max(prob),)

    def test_fe_none_lambda_max_from_top_singular_value(self):
        Y = low_rank(10, rank=2)
        prob = CompletionProblem(Y, np.ones_like(Y, dtype=bool), fe_mode="none")
        s1 = np.linalg.svd(Y, compute_uv=False)[0]
        assert mc_lambda_max(prob) == pytest.approx(2 * s1 / Y.size)
        assert np.abs(soft_impute(prob, mc_lambda_max(prob)).L).max() < 1e-10

    def test_scaling_by_ten(self):
        Y = low_rank(11, rank=2)
        obs = random_mask(11, Y.shape)
        g1 = build_penalty_grid(CompletionProblem(Y, obs))
        g10 = build_penalty_grid(CompletionProblem(10 * Y, obs))
        assert np.allclose(np.array(g10.values), 10 * np.array(g1.values), rtol=1e-10)

    def test_degenerate_zero_matrix(self):
        prob = CompletionProblem(np.zeros((4, 4)), np.ones((4, 4), dtype=bool), fe_mode="none")
        with pytest.raises(ValueError, match="degenerate"):
            build_penalty_grid(prob)


class TestRegimes:
    def test_argmin_per_half(self):
        grid = PenaltyGrid((0.1, 0.2, 0.3, 0.4))
        assert split_regimes(grid, [1, 2, 3, 0.5]) == (0.1, 0.4)

    def test_odd_grid_median_in_lower_half(self):
        grid = PenaltyGrid((1.0, 2.0, 3.0, 4.0, 5.0))
        assert split_regimes(grid, [9, 9, 1, 2, 3]) == (3.0, 4.0)
        assert split_regimes(grid, [9, 9, 9, 1, 3]) == (3.0, 4.0)

    @given(st.lists(st.floats(0.01, 10), min_size=2, max_size=15))
    def test_halves_bracket_median(self, scores):
        grid = PenaltyGrid(tuple(range(1, len(scores) + 1)))
        lo, hi = split_regimes(grid, scores)
        med = float(np.median(grid.values))
        assert lo <= med <= hi

    def test_noiseless_panel_low_regime_near_grid_minimum(self):
        sim = generate_factor_panel(DGPConfig(noise_sd=0.0, seed=2))
        reg = select_regimes(sim.panel, sim.spec, "y")
        assert reg.grid.values.index(reg.lam_low) <= 3
        m = reg.mean_rmse
        i = int(np.argmin(m))
        assert np.all(np.diff(m[i:]) >= -1e-9)

    def test_donor_holdout_option(self):
        sim = generate_factor_panel(DGPConfig(n_units=8, n_years=15, treatment_index=10, seed=2))
        reg = select_regimes(sim.panel, sim.spec, "y", holdout="donors", n_points=6)
        assert reg.holdout == "donors" and reg.cv_rmse.shape == (6, 5)


class TestATT:
    def test_noiseless_recovery(self):
        sim = generate_factor_panel(DGPConfig(noise_sd=0.0, seed=5))
        fit = estimate_att_mc(sim.panel, sim.spec, "y", "low")
        assert fit.att == pytest.approx(-0.75, abs=1e-3)

    def test_noiseless_null(self):
        sim = generate_factor_panel(DGPConfig(noise_sd=0.0, effect=0.0, seed=6))
        grid = build_penalty_grid(CompletionProblem.from_panel(sim.panel, sim.spec, "y"))
        fit = complete_treated(sim.panel, sim.spec, "y", grid.values[0], path=grid.values)
        assert abs(fit.att) < 1e-3

    def test_zero_effect_within_two_se(self):
        from cfpanel.inference import BootstrapConfig, blocked_bootstrap

        sim = generate_factor_panel(DGPConfig(effect=0.0))
        fit = estimate_att_mc(sim.panel, sim.spec, "y", "high")
        se = blocked_bootstrap(fit.gaps.post, BootstrapConfig(1000)).se
        assert abs(fit.att) <= 2 * se

    def test_investment_scale_step(self):
        cfg = DGPConfig(effect=-14.5, unit_effect_range=(15.0, 30.0), factor_scale=3.0, noise_sd=0.2, seed=11)
        sim = generate_factor_panel(cfg)
        fit = estimate_att_mc(sim.panel, sim.spec, "y", "high")
        assert fit.att == pytest.approx(-14.5, abs=1.0)

    def test_fit_records_regime(self):
        sim = generate_factor_panel(DGPConfig(seed=12))
        fit = estimate_att_mc(sim.panel, sim.spec, "y", "low")
        assert fit.info["regime"] == "low"
        assert fit.info["lambda"] == fit.info["regimes"].lam_low
        assert fit.weights is None

    def test_panel_with_treatment_near_start(self):
        Y = low_rank(13, n=6, t=12, rank=1)
        p = panel_from_arrays([f"u{i}" for i in range(6)], range(2000, 2012), ["y"], Y)
        with pytest.raises(ValueError, match="folds"):
            select_regimes(p, TreatmentSpec("u0", 2003), "y")
