from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import env_and_policies, environments
from winlab.analysis import bt_optimum
from winlab.env import Policy, ValidationError
from winlab.fixtures import rps_env
from winlab.game import best_response, exploitability, fictitious_play, game_state
from winlab.targets import wro_kl_target
from winlab.winrate import IDENTITY, LOGIT, h_win_rate


class TestBestResponse:
    def test_rps_uniform_has_full_ties(self):
        env = rps_env()
        br, ties = best_response(env.uniform_policy(), env)
        assert ties == [(0, 1, 2)]
        assert br[0].tolist() == [1.0, 0.0, 0.0]

    def test_beats_rock_with_paper(self):
        env = rps_env()
        br, ties = best_response(Policy.point_mass(env.sizes, [0]), env)
        assert ties == [(1,)]

    @given(env_and_policies(n_policies=1, min_responses=2))
    @settings(max_examples=40, deadline=None)
    def test_no_vertex_does_better(self, case):
        env, opp = case
        br, _ = best_response(opp, env)
        v = h_win_rate(br, opp, env)
        for q in range(len(env)):
            for i in range(env.sizes[q]):
                idx = br.probs.argmax(axis=1).tolist()
                idx[q] = i
                assert h_win_rate(Policy.point_mass(env.sizes, idx), opp, env) <= v + 1e-12


class TestExploitability:
    def test_uniform_rps_is_equilibrium(self):
        env = rps_env()
        u = env.uniform_policy()
        assert exploitability(game_state(u, u, env), env) == pytest.approx(0.0, abs=1e-15)

    def test_pure_rock_is_exploitable(self):
        env = rps_env()
        rock = Policy.point_mass(env.sizes, [0])
        # Paper beats rock w.p. .9 against the self-tie at .5.
        assert exploitability(game_state(rock, rock, env), env) == pytest.approx(0.4, abs=1e-12)

    @given(env_and_policies(n_policies=2))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative_and_payoffs_sum_to_one(self, case):
        env, a, b = case
        s = game_state(a, b, env)
        assert s.exploitability >= 0.0
        assert s.payoff_a + s.payoff_b == pytest.approx(1.0, abs=1e-12)


class TestFictitiousPlay:
    def test_rps_converges_to_uniform(self):
        env = rps_env()
        res = fictitious_play(env, max_iters=10_000, exploit_tol=0.0)
        assert res.exploitability.min() <= 1e-2
        u = env.uniform_policy()
        assert res.final.policy_a.total_variation(u) < 0.02
        assert res.final.policy_b.total_variation(u) < 0.02

    def test_stops_at_tolerance(self):
        res = fictitious_play(rps_env(), max_iters=10_000, exploit_tol=1e-2)
        assert res.converged
        assert res.exploitability[-1] <= 1e-2
        assert np.all(res.exploitability[:-1] > 1e-2)
        assert res.iterations == len(res.payoff_a)

    @given(environments(bt=True, min_responses=2))
    @settings(max_examples=30, deadline=None)
    def test_bt_reaches_dominant_vertex(self, env):
        res = fictitious_play(env, max_iters=200, exploit_tol=0.0)
        assert res.exploitability[-1] == pytest.approx(0.0, abs=1e-12)
        opt = bt_optimum(env)
        for q, best in enumerate(opt):
            assert res.final.policy_a[q][list(best)].sum() == pytest.approx(1.0, abs=1e-12)

    def test_logit_h_on_rps(self):
        res = fictitious_play(rps_env(), h=LOGIT, max_iters=3000, exploit_tol=0.0)
        assert res.exploitability.min() <= 1e-2

    def test_regularized_play_converges_to_closed_form_fixed_point(self):
        env = rps_env()
        res = fictitious_play(env, max_iters=2000, exploit_tol=1e-8, beta=1.0)
        assert res.converged
        pa = res.final.policy_a
        fixed = wro_kl_target(env, res.final.policy_b, env.uniform_policy(), IDENTITY, 1.0)
        assert pa.total_variation(fixed) <= 1e-4

    def test_max_iters_validated(self):
        with pytest.raises(ValidationError):
            fictitious_play(rps_env(), max_iters=0)
