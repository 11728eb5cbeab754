"""Exact values of the training objectives: WRO, WRO-KL, DPO, SFT, reverse KL.

Losses integrate over the preference label analytically (soft labels), so all
values are exact.  Infinite losses are returned as ``inf`` rather than raised,
so scans that touch the simplex boundary keep going.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .env import DomainError, Environment, Policy, ValidationError
from .targets import sft_preferred_target
from .winrate import IDENTITY, HTransform, h_win_rate, per_query_win_rate

OBJECTIVE_FAMILIES = ("wro", "wro_kl", "dpo_offline", "dpo_online", "sft")
LOSS_FAMILIES = ("dpo_offline", "dpo_online", "sft")


def _log_sigmoid(m: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -m)


def _log_ratio(theta: Policy, reference: Policy) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(theta.probs) - np.log(reference.probs)


def dpo_implicit_classifier(theta: Policy, reference: Policy, beta: float, x: int, y0: int, y1: int) -> float:
    """``sigmoid(beta * [log theta/ref (y1) - log theta/ref (y0)])``."""
    vals = [theta.probs[x, y0], theta.probs[x, y1], reference.probs[x, y0], reference.probs[x, y1]]
    if min(vals) <= 0:
        raise DomainError(f"log-ratio undefined: zero probability at query {x}, pair ({y0}, {y1})")
    m = beta * (np.log(vals[1] / vals[3]) - np.log(vals[0] / vals[2]))
    return float(expit(m))


def implicit_margins(theta: Policy, reference: Policy, beta: float) -> np.ndarray:
    """``M[q, y0, y1] = beta * (s(y1) - s(y0))`` with ``s = log theta/ref``; NaN where undefined."""
    s = _log_ratio(theta, reference)
    with np.errstate(invalid="ignore"):
        m = beta * (s[:, None, :] - s[:, :, None])
    # A response compared with itself has margin 0 even where its log-ratio is infinite.
    idx = np.arange(m.shape[1])
    m[:, idx, idx] = np.where(np.isnan(s), np.nan, 0.0)
    return m


def _pair_loss(pref: np.ndarray, margins: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-query ``sum_w CE(pref, sigmoid(margin))``; ``inf`` when a weighted term diverges."""
    on = weights > 0
    m = np.where(on, margins, 0.0)
    if np.any(np.isnan(m)):
        raise DomainError("DPO log-ratio undefined on a weighted pair (zero reference and policy mass)")
    with np.errstate(invalid="ignore"):
        ce = -(pref * _log_sigmoid(m) + (1.0 - pref) * _log_sigmoid(-m))
    # 0 * inf terms (a label with zero probability) contribute nothing.
    ce = np.where((pref == 1.0) & (m == np.inf), 0.0, ce)
    ce = np.where((pref == 0.0) & (m == -np.inf), 0.0, ce)
    return np.where(on, weights * ce, 0.0).sum(axis=(1, 2))


def dpo_loss_offline(
    theta: Policy,
    reference: Policy,
    pair_dist: np.ndarray,
    env: Environment,
    beta: float,
    per_query: bool = False,
):
    """DPO cross-entropy under a fixed pair distribution ``pair_dist[q, y0, y1]``."""
    theta = env.check_policy(theta, "theta")
    reference = env.check_policy(reference, "reference")
    pair_dist = np.asarray(pair_dist, dtype=float)
    if pair_dist.shape != env.pref.shape:
        raise ValidationError(f"pair distribution shape {pair_dist.shape} != {env.pref.shape}")
    if np.any(pair_dist < 0) or np.any(np.abs(pair_dist.sum(axis=(1, 2)) - 1.0) > 1e-12):
        raise ValidationError("pair distribution must be nonnegative and sum to 1 per query")
    losses = _pair_loss(env.pref, implicit_margins(theta, reference, beta), pair_dist)
    if per_query:
        return losses
    return float(np.dot(env.query_probs, losses))


def online_pair_dist(theta: Policy, reference: Policy) -> np.ndarray:
    """``q(y0, y1) = reference(y0) * theta(y1)``."""
    return reference.probs[:, :, None] * theta.probs[:, None, :]


def dpo_loss_online(theta: Policy, reference: Policy, env: Environment, beta: float, per_query: bool = False):
    """DPO loss with pairs ``y1 ~ theta``, ``y0 ~ reference`` and oracle soft labels."""
    theta = env.check_policy(theta, "theta")
    reference = env.check_policy(reference, "reference")
    return dpo_loss_offline(theta, reference, online_pair_dist(theta, reference), env, beta, per_query)


def reverse_kl(p: Policy, q: Policy, query_probs: np.ndarray, per_query: bool = False):
    """``sum_x p(x) KL(p(.|x) || q(.|x))``; ``inf`` on a support violation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p.probs > 0, p.probs * (np.log(p.probs) - np.log(q.probs)), 0.0)
    kl = terms.sum(axis=1)
    if per_query:
        return kl
    return float(np.dot(query_probs, kl))


def sft_nll(theta: Policy, env: Environment, initial: Policy, per_query: bool = False):
    """Cross-entropy of ``theta`` against the preferred-sample distribution."""
    theta = env.check_policy(theta, "theta")
    target = sft_preferred_target(env, initial)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(target.probs > 0, -target.probs * np.log(theta.probs), 0.0)
    losses = terms.sum(axis=1)
    if per_query:
        return losses
    return float(np.dot(env.query_probs, losses))


def wro_kl_objective(
    theta: Policy,
    anchor: Policy,
    reference: Policy,
    env: Environment,
    h: HTransform = IDENTITY,
    beta: float = 1.0,
) -> float:
    """``h_win_rate(theta, anchor) - beta * KL(theta || reference)`` (to be maximized)."""
    theta = env.check_policy(theta, "theta")
    kl = reverse_kl(theta, env.check_policy(reference, "reference"), env.query_probs)
    if np.isinf(kl):
        return -np.inf
    return h_win_rate(theta, anchor, env, h) - beta * kl


@dataclass(frozen=True)
class ObjectiveSpec:
    """A training objective with its bound roles.

    ``wro`` and ``wro_kl`` are maximized; the loss families are minimized.
    ``anchor`` is the win-rate competitor; ``reference`` the KL/DPO reference;
    ``initial`` the data-generating model for SFT.  For ``dpo_online``,
    ``stop_gradient`` treats the pair-sampling distribution as a constant
    when differentiating (the usual online-DPO update).
    """

    family: str
    h: HTransform = IDENTITY
    beta: float = 1.0
    anchor: Policy | None = None
    reference: Policy | None = None
    pair_dist: np.ndarray | None = None
    initial: Policy | None = None
    stop_gradient: bool = True

    def __post_init__(self):
        if self.family not in OBJECTIVE_FAMILIES:
            raise ValueError(f"unknown objective family {self.family!r}")
        if self.family != "wro" and self.family != "sft" and not (self.beta > 0):
            raise DomainError(f"beta must be positive, got {self.beta!r}")
        need = {
            "wro": ("anchor",),
            "wro_kl": ("anchor", "reference"),
            "dpo_offline": ("reference", "pair_dist"),
            "dpo_online": ("reference",),
            "sft": ("initial",),
        }[self.family]
        missing = [n for n in need if getattr(self, n) is None]
        if missing:
            raise ValueError(f"{self.family} objective needs {', '.join(missing)}")

    @property
    def is_loss(self) -> bool:
        return self.family in LOSS_FAMILIES

    @property
    def win_rate_anchor(self) -> Policy:
        """Competitor used when reporting the true win rate of a policy."""
        for p in (self.anchor, self.reference, self.initial):
            if p is not None:
                return p
        raise ValueError("objective has no policy to compare against")


def evaluate_objective(spec: ObjectiveSpec, theta: Policy, env: Environment, per_query: bool = False):
    """Value of ``spec`` at ``theta`` in its natural sense (loss or objective)."""
    f = spec.family
    if f == "wro":
        if per_query:
            return per_query_win_rate(theta, spec.anchor, env, spec.h)
        return h_win_rate(theta, spec.anchor, env, spec.h)
    if f == "wro_kl":
        if per_query:
            wr = per_query_win_rate(theta, spec.anchor, env, spec.h)
            return wr - spec.beta * reverse_kl(theta, spec.reference, env.query_probs, per_query=True)
        return wro_kl_objective(theta, spec.anchor, spec.reference, env, spec.h, spec.beta)
    if f == "dpo_offline":
        return dpo_loss_offline(theta, spec.reference, spec.pair_dist, env, spec.beta, per_query)
    if f == "dpo_online":
        return dpo_loss_online(theta, spec.reference, env, spec.beta, per_query)
    return sft_nll(theta, env, spec.initial, per_query)


def negated_online_dpo_evaluator(beta: float = 1.0, smoothing: float = 0.1):
    """Evaluation ``phi(gen, anc, env) = -L_DPO-online`` for groundedness probes.

    Both policies are mixed with the uniform policy (weight ``smoothing``) so
    that the log-ratios inside the implicit classifier exist at point masses.
    """

    def phi(gen: Policy, anc: Policy, env: Environment) -> float:
        uni = env.uniform_policy()
        theta = gen.mix(uni, 1.0 - smoothing)
        ref = anc.mix(uni, 1.0 - smoothing)
        return -dpo_loss_online(theta, ref, env, beta)

    return phi
