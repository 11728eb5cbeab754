from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import env_and_policies, environments
from winlab.analysis import (
    best_vertex_win_rate,
    bt_optimum,
    filter_sft_winrate_closed_form,
    sft_variance_bound,
    sft_winrate_closed_form,
    wro_kl_target_winrate_closed_form,
)
from winlab.env import Environment, FilterSpec, Policy, PreferenceClassifier, ValidationError
from winlab.fixtures import dpo_counterexample_env, dpo_counterexample_reference, rps_env
from winlab.winrate import IDENTITY, LOG, LOGIT, h_win_rate


class TestClosedForms:
    @given(env_and_policies(n_policies=1))
    @settings(max_examples=50, deadline=None)
    def test_sft(self, case):
        env, init = case
        rep = sft_winrate_closed_form(env, init)
        assert rep.abs_diff <= 1e-10

    def test_sft_against_loop_variance(self):
        env = dpo_counterexample_env()
        init = dpo_counterexample_reference()
        m = env.classifier[0].tolist()
        var = oracle.variance(list(init[0]), oracle.avg_pref(m, list(init[0])))
        assert sft_winrate_closed_form(env, init).closed_form == pytest.approx(0.5 + 2 * var, abs=1e-15)

    @given(env_and_policies(n_policies=1), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_filter(self, case, seed):
        env, init = case
        filt = np.random.default_rng(seed).random((len(env), env.width, env.width, 2)) + 0.01
        rep = filter_sft_winrate_closed_form(env, init, FilterSpec(np.minimum(filt, 1.0), env.sizes))
        assert rep.abs_diff <= 1e-10

    @given(env_and_policies(n_policies=1, min_responses=2), st.sampled_from([1.0, 0.1, 0.01]))
    @settings(max_examples=50, deadline=None)
    def test_wro_kl(self, case, beta):
        env, init = case
        rep = wro_kl_target_winrate_closed_form(env, init, IDENTITY, beta)
        assert rep.abs_diff <= 1e-9

    def test_preferred_filter_reduces_to_sft(self):
        env = dpo_counterexample_env()
        init = dpo_counterexample_reference()
        a = filter_sft_winrate_closed_form(env, init, FilterSpec.preferred(env.sizes)).closed_form
        assert a == pytest.approx(sft_winrate_closed_form(env, init).closed_form, abs=1e-15)


class TestVarianceBound:
    @given(env_and_policies(n_policies=1))
    @settings(max_examples=60, deadline=None)
    def test_bound_holds(self, case):
        env, init = case
        vb = sft_variance_bound(env, init)
        assert vb.holds
        assert np.all(vb.variance < 0.25)

    def test_deterministic_pair_stays_below_bound(self):
        # Self-comparison at 0.5 keeps two responses away from the bound.
        env = Environment.build(PreferenceClassifier.from_matrices([[[0.5, 1.0], [0.0, 0.5]]]))
        vb = sft_variance_bound(env, env.uniform_policy())
        assert vb.variance[0] == pytest.approx(0.0625, abs=1e-15)
        assert vb.bound[0] == pytest.approx(0.25, abs=1e-15)
        assert not vb.strict[0]


class TestVertices:
    def test_best_vertex_beats_sft(self):
        env = dpo_counterexample_env()
        init = dpo_counterexample_reference()
        best, idx = best_vertex_win_rate(env, init)
        assert idx == [0]
        assert best > sft_winrate_closed_form(env, init).closed_form

    @given(environments(bt=True, min_responses=2))
    @settings(max_examples=50, deadline=None)
    def test_bt_argmax_shared_across_h(self, env):
        anchor = env.uniform_policy()
        opt = bt_optimum(env)
        for h in (IDENTITY, LOG, LOGIT):
            _, idx = best_vertex_win_rate(env, anchor, h)
            assert all(i in opt[q] for q, i in enumerate(idx))

    def test_bt_optimum_requires_bt(self):
        with pytest.raises(ValidationError):
            bt_optimum(rps_env())

    def test_best_vertex_matches_enumeration(self, rng):
        env = rps_env()
        anchor = Policy.from_lists([rng.dirichlet(np.ones(3))])
        best, _ = best_vertex_win_rate(env, anchor)
        brute = max(h_win_rate(Policy.point_mass(env.sizes, [i]), anchor, env) for i in range(3))
        assert best == pytest.approx(brute, abs=1e-15)
