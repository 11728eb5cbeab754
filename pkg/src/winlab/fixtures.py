"""Small named environments and policies used by tests, the CLI and docs.

``PUBLISHED`` holds the published metric values for the two three-response
DPO counterexample pairs so they can be printed next to recomputed ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .env import Environment, Policy, PreferenceClassifier, make_bt_classifier
from .optimize import CorrespondenceVerdict, correspondence_check

RESPONSES = ("a", "b", "c")


def three_response_bt(p_ab: float, p_bc: float) -> Environment:
    """BT environment over ``a, b, c`` where ``a`` beats ``b`` w.p. ``p_ab`` and ``b`` beats ``c`` w.p. ``p_bc``."""
    rewards = [[float(logit(p_ab)), 0.0, -float(logit(p_bc))]]
    return Environment.build(make_bt_classifier(rewards), queries=["x"], responses=[RESPONSES])


def dpo_counterexample_env() -> Environment:
    """``a`` strongly preferred to ``b`` (.9), ``b`` mildly preferred to ``c`` (.6)."""
    return three_response_bt(0.9, 0.6)


def dpo_counterexample_reference() -> Policy:
    return Policy.from_lists([[0.1, 0.5, 0.4]])


def uniform_reference() -> Policy:
    return Policy.uniform((3,))


def steep_chain_env() -> Environment:
    """Both neighbouring gaps at .9."""
    return three_response_bt(0.9, 0.9)


def rps_env(p: float = 0.9) -> Environment:
    """Rock-paper-scissors cycle: paper beats rock, scissors beat paper, rock beats scissors, each w.p. ``p``."""
    m = np.full((3, 3), 0.5)
    for loser, winner in ((0, 1), (1, 2), (2, 0)):
        m[loser, winner] = p
        m[winner, loser] = 1.0 - p
    clf = PreferenceClassifier.from_matrices([m.tolist()])
    return Environment.build(clf, queries=["x"], responses=[("rock", "paper", "scissors")])


PLAIN_PAIR = (Policy.from_lists([[0.1, 0.6, 0.3]]), Policy.from_lists([[0.8, 0.001, 0.199]]))
REGULARIZED_PAIR = (Policy.from_lists([[0.6, 0.07, 0.33]]), Policy.from_lists([[0.56, 0.43, 0.01]]))


@dataclass(frozen=True)
class Published:
    loss: tuple[float, float]
    win_rate: tuple[float, float]
    logit_win_rate: tuple[float, float]
    kl: tuple[float, float] | None = None


PUBLISHED = {
    "plain": Published((0.51, 0.78), (0.54, 0.67), (0.26, 1.7)),
    "regularized": Published((0.59, 0.64), (0.69, 0.70), (1.2, 1.3), (0.87, 0.86)),
}

PAIRS = {"plain": PLAIN_PAIR, "regularized": REGULARIZED_PAIR}


def recompute(name: str, beta: float = 1.0) -> CorrespondenceVerdict:
    t1, t2 = PAIRS[name]
    return correspondence_check(t1, t2, dpo_counterexample_env(), dpo_counterexample_reference(), beta)


def compare_report(beta: float = 1.0) -> str:
    """Aligned text table of published vs recomputed metrics for both pairs."""
    lines = [f"{'pair':<12}{'metric':<16}{'published':>22}{'recomputed':>26}"]
    for name, pub in PUBLISHED.items():
        v = recompute(name, beta)
        rows = [
            ("loss", pub.loss, (v.loss1, v.loss2)),
            ("win_rate", pub.win_rate, (v.win1, v.win2)),
            ("logit_win_rate", pub.logit_win_rate, (v.logit_win1, v.logit_win2)),
        ]
        if pub.kl is not None:
            rows.append(("kl", pub.kl, (v.kl1, v.kl2)))
        for metric, published, ours in rows:
            lines.append(
                f"{name:<12}{metric:<16}{published[0]:>10.3g} / {published[1]:<9.3g}{ours[0]:>12.4f} / {ours[1]:<11.4f}"
            )
        lines.append(f"{name:<12}{'violation':<16}{'plain=' + str(v.plain_violation):>22}{'regularized=' + str(v.regularized_violation):>26}")
    return "\n".join(lines)


def match_pair(env: Environment, generator: Policy, anchor: Policy, tol: float = 1e-12) -> str | None:
    """Name of the shipped pair ``generator`` belongs to, if the inputs are the shipped example."""
    ref_env = dpo_counterexample_env()
    if env.sizes != ref_env.sizes or np.max(np.abs(env.pref - ref_env.pref)) > tol:
        return None
    if anchor.sizes != (3,) or np.max(np.abs(anchor.probs - dpo_counterexample_reference().probs)) > tol:
        return None
    for name, pair in PAIRS.items():
        for p in pair:
            if generator.sizes == p.sizes and np.max(np.abs(generator.probs - p.probs)) <= tol:
                return name
    return None
