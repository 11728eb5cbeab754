"""Analytic win-rate formulas, each paired with a brute-force oracle.

Every ``*_closed_form`` function returns a :class:`WinRateReport` holding the
formula value, the value obtained by building the target distribution and
enumerating its win rate, and their absolute difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .env import BTClassifier, Environment, FilterSpec, Policy, ValidationError
from .targets import avg_filter, avg_h, avg_pref, filter_sft_target, sft_preferred_target, wro_kl_target
from .winrate import IDENTITY, HTransform, h_win_rate

TIE_TOL = 1e-12


@dataclass(frozen=True)
class WinRateReport:
    closed_form: float
    brute_force: float
    components: dict = field(default_factory=dict)

    @property
    def abs_diff(self) -> float:
        return abs(self.closed_form - self.brute_force)


def _weighted_moments(w: np.ndarray, a: np.ndarray, b: np.ndarray | None = None):
    """Per-row mean of ``a`` and (co)variance with ``b`` under weights ``w``."""
    if b is None:
        b = a
    ma = (w * a).sum(axis=1)
    mb = (w * b).sum(axis=1)
    cov = (w * (a - ma[:, None]) * (b - mb[:, None])).sum(axis=1)
    return ma, mb, cov


def sft_winrate_closed_form(env: Environment, initial: Policy) -> WinRateReport:
    """Win rate of SFT-on-preferred over its own initial model: ``0.5 + 2 E_x Var[AvgPref]``."""
    initial = env.check_policy(initial, "initial")
    ap = avg_pref(env, initial)
    mean, _, var = _weighted_moments(initial.probs, ap)
    closed = 0.5 + 2.0 * float(np.dot(env.query_probs, var))
    brute = h_win_rate(sft_preferred_target(env, initial), initial, env)
    return WinRateReport(closed, brute, {"avg_pref": ap, "mean_avg_pref": mean, "var_avg_pref": var})


def filter_sft_winrate_closed_form(env: Environment, initial: Policy, filt: FilterSpec) -> WinRateReport:
    """Win rate of filter + SFT: ``0.5 + E_x Cov[AvgFilter, AvgPref] / E[AvgFilter]``."""
    initial = env.check_policy(initial, "initial")
    af = avg_filter(env, initial, filt)
    ap = avg_pref(env, initial)
    mean_f, _, cov = _weighted_moments(initial.probs, af, ap)
    if np.any(mean_f <= 0):
        raise ValidationError("filter accepts no data for some query")
    closed = 0.5 + float(np.dot(env.query_probs, cov / mean_f))
    brute = h_win_rate(filter_sft_target(env, initial, filt), initial, env)
    return WinRateReport(
        closed, brute, {"avg_filter": af, "avg_pref": ap, "cov": cov, "mean_avg_filter": mean_f}
    )


def wro_kl_target_winrate_closed_form(
    env: Environment, initial: Policy, h: HTransform = IDENTITY, beta: float = 1.0
) -> WinRateReport:
    """Win rate of the WRO-KL target over ``initial`` when anchor = reference = initial.

    ``E_x [ E_init[AvgPref e^{AvgH/beta}] / E_init[e^{AvgH/beta}] ]``, with the
    exponentials shifted per query (log-normalizer ``log Z(x)`` reported).
    """
    initial = env.check_policy(initial, "initial")
    on = initial.probs > 0
    ah = avg_h(env, initial, h, support=on)
    ap = avg_pref(env, initial)
    with np.errstate(divide="ignore"):
        logw = np.where(on, np.log(initial.probs) + ah / beta, -np.inf)
    log_z = logsumexp(logw, axis=1)
    weights = np.exp(logw - log_z[:, None])
    per_query = (weights * ap).sum(axis=1)
    closed = float(np.dot(env.query_probs, per_query))
    brute = h_win_rate(wro_kl_target(env, initial, initial, h, beta), initial, env)
    return WinRateReport(closed, brute, {"avg_h": ah, "avg_pref": ap, "log_z": log_z, "per_query": per_query})


@dataclass(frozen=True)
class VarianceBound:
    mean: np.ndarray
    variance: np.ndarray
    bound: np.ndarray
    strict: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.variance <= self.bound + 1e-15) and np.all(self.bound <= 0.25))


def sft_variance_bound(env: Environment, initial: Policy) -> VarianceBound:
    """Per query: ``Var[AvgPref] <= mu (1 - mu) <= 1/4``; strict when 3+ responses have mass."""
    initial = env.check_policy(initial, "initial")
    ap = avg_pref(env, initial)
    mean, _, var = _weighted_moments(initial.probs, ap)
    support = (initial.probs > 0).sum(axis=1)
    return VarianceBound(mean, var, mean * (1.0 - mean), support >= 3)


def best_vertex_win_rate(env: Environment, anchor: Policy, h: HTransform = IDENTITY) -> tuple[float, list[int]]:
    """Largest h-win rate over point-mass policies against ``anchor`` (lowest index on ties)."""
    ah = avg_h(env, anchor, h)
    ah = np.where(env.mask, ah, -np.inf)
    best = ah.argmax(axis=1)
    return float(np.dot(env.query_probs, ah.max(axis=1))), best.tolist()


def bt_optimum(env: Environment, anchor: Policy | None = None) -> list[tuple[int, ...]]:
    """Per query, the set of maximum-reward responses of a Bradley-Terry environment.

    Any policy supported on these sets maximizes every strictly increasing
    h-win rate against every anchor.  Ties are returned, never broken here.
    """
    clf = env.classifier
    if not isinstance(clf, BTClassifier):
        raise ValidationError("bt_optimum requires a Bradley-Terry classifier")
    if anchor is not None:
        env.check_policy(anchor, "anchor")
    out = []
    for q in range(len(env)):
        r = clf.reward_vector(q)
        out.append(tuple(int(i) for i in np.flatnonzero(r >= r.max() - TIE_TOL)))
    return out
