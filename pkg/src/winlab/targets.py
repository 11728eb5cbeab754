"""Closed-form optimal (target) distributions of the objective families.

Every target has the form ``target(y | x) ∝ base(y | x) * g(x, y)`` for a
per-response tilt ``g``.  Exponential tilts are normalized in log space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .env import DomainError, Environment, FilterSpec, Policy, ValidationError
from .winrate import IDENTITY, LOGIT, HTransform

FAMILIES = ("wro_kl", "rlhf_dpo", "sft_preferred", "filter_sft")


@dataclass(frozen=True)
class TargetSpec:
    family: str
    anchor: Policy
    reference: Policy
    h: HTransform = IDENTITY
    beta: float | None = None
    filter: FilterSpec | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown target family {self.family!r}")
        if self.family in ("wro_kl", "rlhf_dpo"):
            _check_beta(self.beta)
        if self.family == "filter_sft" and self.filter is None:
            raise ValueError("filter_sft needs a filter")


def _check_beta(beta):
    if beta is None or not np.isfinite(beta) or beta <= 0:
        raise DomainError(f"beta must be a positive finite number, got {beta!r}")


def avg_h(env: Environment, anchor: Policy, h: HTransform = IDENTITY, support: np.ndarray | None = None) -> np.ndarray:
    """``AvgH[q, y] = sum_{y0} anchor(y0 | q) h(pref[q][y0, y])``.

    Only entries with ``support[q, y]`` (default: every real response) are
    checked against h's domain; others are 0.
    """
    anchor = env.check_policy(anchor, "anchor")
    if support is None:
        support = env.mask
    need = (anchor.probs[:, :, None] > 0) & support[:, None, :]
    return np.einsum("qa,qab->qb", anchor.probs, h(env.pref, need))


def avg_pref(env: Environment, anchor: Policy) -> np.ndarray:
    return avg_h(env, anchor, IDENTITY)


def avg_filter(env: Environment, initial: Policy, filt: FilterSpec) -> np.ndarray:
    """``AvgFilter[q, y1] = sum_{y0, l} initial(y0) p(l | y0, y1) filt[y1, y0, l]``."""
    if filt.sizes != env.sizes:
        raise ValidationError("filter sizes do not match environment")
    p1 = np.swapaxes(env.pref, 1, 2)  # p1[q, y1, y0] = pref[q][y0, y1]
    accept = p1 * filt.filt[..., 1] + (1.0 - p1) * filt.filt[..., 0]
    return np.einsum("qb,qab->qa", initial.probs, accept)


def _tilt_normalize(base: Policy, log_tilt: np.ndarray) -> Policy:
    with np.errstate(divide="ignore"):
        logw = np.where(base.probs > 0, np.log(base.probs) + log_tilt, -np.inf)
    logz = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(logz)):
        raise DomainError("target normalizer is not finite")
    probs = np.exp(logw - logz)
    probs /= probs.sum(axis=1, keepdims=True)
    return Policy(probs, base.sizes)


def wro_kl_tilt(env: Environment, anchor: Policy, reference: Policy, h: HTransform, beta: float) -> np.ndarray:
    """Log-tilt ``AvgH / beta`` on the reference support (0 elsewhere)."""
    _check_beta(beta)
    reference = env.check_policy(reference, "reference")
    return avg_h(env, anchor, h, support=reference.probs > 0) / beta


def wro_kl_target(
    env: Environment,
    anchor: Policy,
    reference: Policy,
    h: HTransform = IDENTITY,
    beta: float = 1.0,
) -> Policy:
    """``target(y) ∝ reference(y) exp(AvgH(y) / beta)``.

    Responses with zero reference mass get exactly zero target mass.
    """
    reference = env.check_policy(reference, "reference")
    return _tilt_normalize(reference, wro_kl_tilt(env, anchor, reference, h, beta))


def rlhf_dpo_target(env: Environment, beta: float, anchor: Policy, reference: Policy) -> Policy:
    """Shared target of KL-regularized RLHF and DPO: WRO-KL with h = logit."""
    return wro_kl_target(env, anchor, reference, LOGIT, beta)


def sft_preferred_target(env: Environment, initial: Policy) -> Policy:
    """SFT on the preferred sample of pairs drawn from ``initial``: ``∝ initial * AvgPref``."""
    initial = env.check_policy(initial, "initial")
    tilt = avg_pref(env, initial)
    w = initial.probs * tilt
    z = w.sum(axis=1, keepdims=True)
    # Self-comparison at 0.5 keeps AvgPref > 0 on the support.
    assert np.all(z > 0), "AvgPref vanished on the support of the initial policy"
    return Policy(w / z, initial.sizes)


def filter_sft_target(env: Environment, initial: Policy, filt: FilterSpec) -> Policy:
    """SFT on filtered samples: ``∝ initial * AvgFilter``."""
    initial = env.check_policy(initial, "initial")
    w = initial.probs * avg_filter(env, initial, filt)
    z = w.sum(axis=1, keepdims=True)
    if np.any(z <= 0):
        q = int(np.flatnonzero(z.ravel() <= 0)[0])
        raise ValidationError(f"filter accepts no data under the initial policy for query {env.queries[q]!r}")
    return Policy(w / z, initial.sizes)


def target_tilt(env: Environment, spec: TargetSpec) -> np.ndarray:
    """Multiplicative tilt ``g(x, y)`` applied to the base policy.

    Exponential tilts are rescaled so the largest per query is 1 (the scale
    cancels in normalization and the raw value can overflow at small beta).
    """
    if spec.family in ("wro_kl", "rlhf_dpo"):
        h = LOGIT if spec.family == "rlhf_dpo" else spec.h
        log_tilt = wro_kl_tilt(env, spec.anchor, spec.reference, h, spec.beta)
        on = env.check_policy(spec.reference).probs > 0
        top = np.max(np.where(on, log_tilt, -np.inf), axis=1, keepdims=True)
        return np.where(on, np.exp(log_tilt - top), 0.0)
    if spec.family == "sft_preferred":
        return avg_pref(env, spec.reference)
    return avg_filter(env, spec.reference, spec.filter)


def compute_target(env: Environment, spec: TargetSpec) -> Policy:
    if spec.family == "wro_kl":
        return wro_kl_target(env, spec.anchor, spec.reference, spec.h, spec.beta)
    if spec.family == "rlhf_dpo":
        return rlhf_dpo_target(env, spec.beta, spec.anchor, spec.reference)
    if spec.family == "sft_preferred":
        return sft_preferred_target(env, spec.reference)
    return filter_sft_target(env, spec.reference, spec.filter)
