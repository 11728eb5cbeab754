from __future__ import annotations

import re
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from winlab.env import Environment, Policy, dirichlet_policy, make_bt_classifier, random_classifier  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def env_lists(env: Environment):
    """Per-query classifier blocks and query probabilities as plain lists."""
    return [env.classifier[q].tolist() for q in range(len(env))], env.query_probs.tolist()


@st.composite
def environments(draw, max_queries=4, max_responses=6, min_responses=1, bt=None):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    Q = draw(st.integers(1, max_queries))
    sizes = [draw(st.integers(min_responses, max_responses)) for _ in range(Q)]
    use_bt = draw(st.booleans()) if bt is None else bt
    if use_bt:
        clf = make_bt_classifier([rng.normal(0, 2, size=n) for n in sizes])
    else:
        clf = random_classifier(sizes, rng)
    return Environment.build(clf, query_probs=rng.dirichlet(np.ones(Q)))


@st.composite
def env_and_policies(draw, n_policies=2, **kwargs):
    env = draw(environments(**kwargs))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return (env, *[dirichlet_policy(env.sizes, rng) for _ in range(n_policies)])


def as_lists(policy: Policy):
    return policy.to_lists()


_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or not (report.when == "call" or report.failed):
        return
    props = dict(report.user_properties)
    status = "PASS" if report.passed else "FAIL"
    _ACCEPTANCE[int(m.group(1))] = (status, props.get("title", ""), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[n]
        line = f"criterion {n:>2} {status}  {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
