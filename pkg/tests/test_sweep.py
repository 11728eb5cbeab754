from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from winlab.env import ValidationError, random_environment
from winlab.sweep import EstimateSpec, SweepConfig, rank_correlations, run_sweep, spearman
from winlab.targets import wro_kl_target
from winlab.winrate import IDENTITY, LOG, LOGIT, h_win_rate


@pytest.fixture
def env():
    return random_environment(np.random.default_rng(12), 3, 5, min_responses=3)


def _config(env, **kw):
    base = dict(
        h_grid=(IDENTITY, LOG, LOGIT),
        beta_grid=(1.0, 0.1, 0.01),
        estimates=(EstimateSpec("oracle"), EstimateSpec("bt_fit"), EstimateSpec("perturbed", 0.3, 4)),
    )
    base.update(kw)
    return SweepConfig(env, **base)


class TestEstimateSpec:
    def test_labels(self):
        assert EstimateSpec("perturbed", 0.25, 3).label == "perturbed(eta=0.25,seed=3)"
        assert EstimateSpec("oracle").label == "oracle"

    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(kind="perturbed"), dict(kind="perturbed", eta=2.0, seed=1)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            EstimateSpec(**kw)


class TestRunSweep:
    def test_grid_shape_and_values(self, env):
        cfg = _config(env)
        res = run_sweep(cfg)
        assert len(res.rows) == 27
        assert all(r.ok for r in res.rows)
        row = next(r for r in res.rows if r.estimate == "oracle" and r.h == "identity" and r.beta == 0.1)
        ref = env.uniform_policy()
        target = wro_kl_target(env, ref, ref, IDENTITY, 0.1)
        assert row.win_rate == pytest.approx(h_win_rate(target, ref, env), abs=1e-12)

    def test_win_rate_uses_oracle_classifier(self, env):
        res = run_sweep(_config(env, h_grid=(IDENTITY,), beta_grid=(0.05,), estimates=(EstimateSpec("perturbed", 1.0, 9),)))
        row = res.rows[0]
        est_env = env.with_classifier(EstimateSpec("perturbed", 1.0, 9).build(env))
        ref = env.uniform_policy()
        target = wro_kl_target(est_env, ref, ref, IDENTITY, 0.05)
        assert row.win_rate == pytest.approx(h_win_rate(target, ref, env), abs=1e-12)

    def test_oracle_win_rate_grows_as_beta_shrinks(self, env):
        res = run_sweep(_config(env, h_grid=(IDENTITY,), estimates=(EstimateSpec("oracle"),)))
        wins = [r.win_rate for r in res.rows]
        assert wins == sorted(wins)

    def test_exact_ascent_optimizer_matches_closed_form(self, env):
        a = run_sweep(_config(env, h_grid=(IDENTITY,), beta_grid=(0.5,), estimates=(EstimateSpec("oracle"),)))
        b = run_sweep(_config(env, h_grid=(IDENTITY,), beta_grid=(0.5,), estimates=(EstimateSpec("oracle"),), optimizer="exact_ascent"))
        assert b.rows[0].converged
        assert a.rows[0].win_rate == pytest.approx(b.rows[0].win_rate, abs=1e-8)

    def test_domain_failures_are_recorded(self):
        from winlab.env import Environment, PreferenceClassifier

        env = Environment.build(PreferenceClassifier.from_matrices([[[0.5, 1.0], [0.0, 0.5]]]))
        res = run_sweep(SweepConfig(env, (LOGIT, IDENTITY), (1.0,), (EstimateSpec("oracle"),)))
        assert not res.rows[0].ok and "logit" in res.rows[0].error
        assert res.rows[1].ok

    @pytest.mark.parametrize("kw", [dict(beta_grid=()), dict(beta_grid=(0.0,)), dict(optimizer="adam"), dict(h_grid=())])
    def test_config_validation(self, env, kw):
        with pytest.raises(ValidationError):
            _config(env, **kw)


class TestCorrelations:
    def test_statistic_matches_scipy(self, rng):
        x, y = rng.random(30), rng.random(30)
        c = spearman(x, y, permutations=2000, seed=1)
        assert c.rho == pytest.approx(spearmanr(x, y).statistic, abs=1e-12)
        assert 0.0 < c.p_value <= 1.0

    def test_perfect_monotone(self):
        c = spearman(np.arange(20.0), np.arange(20.0) ** 3, permutations=2000, seed=0)
        assert c.rho == pytest.approx(1.0)
        assert c.p_value < 0.01

    def test_degenerate_column(self):
        c = spearman([1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0])
        assert c.degenerate and math.isnan(c.rho)

    def test_deterministic(self, env):
        res = run_sweep(_config(env))
        a = rank_correlations(res, permutations=500, seed=3)
        b = rank_correlations(res, permutations=500, seed=3)
        assert a == b
        assert [c.name for c in a] == ["objective", "beta", "h", "estimate"]

    def test_too_few_rows(self, env):
        res = run_sweep(_config(env, h_grid=(IDENTITY,), beta_grid=(1.0,), estimates=(EstimateSpec("oracle"),)))
        with pytest.raises(ValidationError):
            rank_correlations(res)
