from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import environments
from winlab.env import BTClassifier, ValidationError
from winlab.io import (
    environment_from_dict,
    environment_to_dict,
    filter_from_dict,
    load_environment,
    load_policy,
    load_sweep_config,
    parse_json,
    policy_from_dict,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def _matrix_doc(block):
    return {
        "queries": [{"id": "q0", "prob": 1.0, "responses": ["a", "b"]}],
        "classifier": {"kind": "matrix", "data": [block]},
    }


class TestParsing:
    def test_syntax_error_has_location(self):
        with pytest.raises(ValidationError, match=r"cfg.json:2:\d+:"):
            parse_json('{\n  "a": ,\n}', "cfg.json")

    def test_missing_field_names_path(self):
        with pytest.raises(ValidationError, match=r"environment.queries\[0\]"):
            environment_from_dict({"queries": [{"prob": 1.0, "responses": ["a"]}], "classifier": {"kind": "bt", "data": [[0]]}})

    def test_antisymmetry_violation_uses_identifiers(self):
        with pytest.raises(ValidationError) as exc:
            environment_from_dict(_matrix_doc([[0.5, 0.8], [0.3, 0.5]]))
        assert any("antisymmetry violated at (q0, a, b)" in v for v in exc.value.violations)

    def test_non_numeric_entry(self):
        with pytest.raises(ValidationError, match=r"data\[0\]\[1\]"):
            environment_from_dict(_matrix_doc([[0.5, 0.5], [0.5, "x"]]))

    def test_unknown_classifier_kind(self):
        doc = _matrix_doc([[0.5]])
        doc["classifier"]["kind"] = "table"
        with pytest.raises(ValidationError, match="kind"):
            environment_from_dict(doc)

    def test_file_errors_carry_path(self, tmp_path):
        p = tmp_path / "env.json"
        p.write_text(json.dumps(_matrix_doc([[0.5, 0.8], [0.3, 0.5]])))
        with pytest.raises(ValidationError, match=str(p)):
            load_environment(p)


class TestRoundTrip:
    @given(environments())
    @settings(max_examples=40, deadline=None)
    def test_environment(self, env):
        back = environment_from_dict(json.loads(json.dumps(environment_to_dict(env))))
        assert back.queries == env.queries and back.responses == env.responses
        np.testing.assert_array_equal(back.query_probs, env.query_probs)
        np.testing.assert_allclose(back.pref, env.pref, atol=1e-15)
        assert isinstance(back.classifier, BTClassifier) == isinstance(env.classifier, BTClassifier)

    def test_policy_checked_against_env(self):
        env = load_environment(FIXTURES / "dpo_counterexample_env.json")
        with pytest.raises(ValidationError):
            policy_from_dict({"probs": [[0.5, 0.5]]}, env)


class TestShippedFixtures:
    def test_counterexample_env(self):
        env = load_environment(FIXTURES / "dpo_counterexample_env.json")
        assert env.pref[0, 1, 0] == pytest.approx(0.9, abs=1e-12)
        ref = load_policy(FIXTURES / "dpo_counterexample_reference.json", env)
        assert ref[0].tolist() == [0.1, 0.5, 0.4]

    def test_sweep_config(self):
        cfg = load_sweep_config(FIXTURES / "sweep_config.json")
        assert [h.kind for h in cfg.h_grid] == ["identity", "log", "logit"]
        assert len(cfg.estimates) == 4

    @pytest.mark.parametrize("doc", [{"kind": "preferred"}, {"kind": "constant", "value": 0.5}, {"kind": "threshold", "threshold": 0.5}])
    def test_filters(self, doc):
        env = load_environment(FIXTURES / "rps_env.json")
        f = filter_from_dict(doc, env)
        assert f.sizes == env.sizes

    def test_bad_filter_kind(self):
        env = load_environment(FIXTURES / "rps_env.json")
        with pytest.raises(ValidationError):
            filter_from_dict({"kind": "oops"}, env)
