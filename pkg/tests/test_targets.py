from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import env_and_policies
from winlab.env import DomainError, FilterSpec, Policy, ValidationError
from winlab.fixtures import dpo_counterexample_env, dpo_counterexample_reference
from winlab.targets import (
    TargetSpec,
    compute_target,
    filter_sft_target,
    rlhf_dpo_target,
    sft_preferred_target,
    target_tilt,
    wro_kl_target,
)
from winlab.winrate import IDENTITY, LOGIT


class TestFrozenValues:
    def setup_method(self):
        self.env = dpo_counterexample_env()
        self.ref = dpo_counterexample_reference()

    def test_sft_target(self):
        got = sft_preferred_target(self.env, self.ref)
        np.testing.assert_allclose(got[0], [0.17448275862068968, 0.5, 0.3255172413793104], atol=1e-14)

    def test_wro_kl_identity_target(self):
        got = wro_kl_target(self.env, self.ref, self.ref, IDENTITY, 1.0)
        np.testing.assert_allclose(got[0], [0.1437486633511832, 0.49526377555035844, 0.36098756109845825], atol=1e-14)

    def test_rlhf_target(self):
        got = rlhf_dpo_target(self.env, 1.0, self.ref, self.ref)
        np.testing.assert_allclose(got[0], [0.54, 0.3, 0.16], atol=1e-14)


class TestAgainstOracle:
    @given(env_and_policies(n_policies=2, min_responses=2), st.sampled_from([1.0, 0.1, 0.01]))
    @settings(max_examples=50, deadline=None)
    def test_wro_kl(self, case, beta):
        env, anchor, ref = case
        got = wro_kl_target(env, anchor, ref, IDENTITY, beta)
        for q in range(len(env)):
            want = oracle.wro_kl_target(env.classifier[q].tolist(), list(anchor[q]), list(ref[q]), beta)
            np.testing.assert_allclose(got[q], want, atol=1e-12)

    @given(env_and_policies(n_policies=1))
    @settings(max_examples=50, deadline=None)
    def test_sft(self, case):
        env, init = case
        got = sft_preferred_target(env, init)
        for q in range(len(env)):
            np.testing.assert_allclose(got[q], oracle.sft_target(env.classifier[q].tolist(), list(init[q])), atol=1e-14)

    @given(env_and_policies(n_policies=1))
    @settings(max_examples=40, deadline=None)
    def test_filter_matches_sft_for_preferred_filter(self, case):
        env, init = case
        a = filter_sft_target(env, init, FilterSpec.preferred(env.sizes))
        np.testing.assert_allclose(a.probs, sft_preferred_target(env, init).probs, atol=1e-14)

    def test_filter_against_loop(self, rng):
        env = dpo_counterexample_env()
        init = Policy.from_lists([[0.2, 0.3, 0.5]])
        filt = rng.random((1, 3, 3, 2))
        got = filter_sft_target(env, init, FilterSpec(filt, (3,)))
        want = oracle.filter_target(env.classifier[0].tolist(), [0.2, 0.3, 0.5], filt[0].tolist())
        np.testing.assert_allclose(got[0], want, atol=1e-14)


class TestEdgeCases:
    def test_unconditional_filter_returns_initial(self):
        env = dpo_counterexample_env()
        init = Policy.from_lists([[0.2, 0.3, 0.5]])
        got = filter_sft_target(env, init, FilterSpec.constant(env.sizes, 1.0))
        np.testing.assert_allclose(got.probs, init.probs, atol=1e-15)

    def test_filter_with_no_mass_under_initial(self):
        env = dpo_counterexample_env()
        init = Policy.point_mass(env.sizes, [0])
        filt = np.zeros((1, 3, 3, 2))
        filt[0, 1, 1, 1] = 1.0
        with pytest.raises(ValidationError, match="accepts no data"):
            filter_sft_target(env, init, FilterSpec(filt, (3,)))

    def test_zero_reference_mass_stays_zero(self):
        env = dpo_counterexample_env()
        ref = Policy.from_lists([[0.0, 0.5, 0.5]])
        got = wro_kl_target(env, env.uniform_policy(), ref, LOGIT, 0.01)
        assert got[0][0] == 0.0
        assert got[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_tiny_beta_does_not_overflow(self):
        env = dpo_counterexample_env()
        got = wro_kl_target(env, env.uniform_policy(), env.uniform_policy(), IDENTITY, 1e-6)
        np.testing.assert_allclose(got[0], [1.0, 0.0, 0.0], atol=1e-12)

    def test_large_beta_returns_reference(self):
        env = dpo_counterexample_env()
        ref = dpo_counterexample_reference()
        got = wro_kl_target(env, ref, ref, IDENTITY, 1e12)
        np.testing.assert_allclose(got.probs, ref.probs, atol=1e-11)

    @pytest.mark.parametrize("beta", [0.0, -1.0, math.inf, math.nan])
    def test_bad_beta(self, beta):
        env = dpo_counterexample_env()
        with pytest.raises(DomainError):
            wro_kl_target(env, env.uniform_policy(), env.uniform_policy(), IDENTITY, beta)

    def test_spec_validation(self):
        p = Policy.uniform((3,))
        with pytest.raises(ValueError):
            TargetSpec("nope", p, p)
        with pytest.raises(ValueError):
            TargetSpec("filter_sft", p, p)


class TestTilt:
    @pytest.mark.parametrize("family", ["wro_kl", "rlhf_dpo", "sft_preferred", "filter_sft"])
    def test_target_is_normalized_tilted_base(self, family):
        env = dpo_counterexample_env()
        ref = dpo_counterexample_reference()
        spec = TargetSpec(family, ref, ref, IDENTITY, 0.5, FilterSpec.preferred(env.sizes))
        w = ref.probs * target_tilt(env, spec)
        np.testing.assert_allclose(compute_target(env, spec).probs, w / w.sum(axis=1, keepdims=True), atol=1e-14)
