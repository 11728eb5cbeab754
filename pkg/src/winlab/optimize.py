"""Exact-gradient and score-function optimization of tabular policies, plus the
Dirichlet scan for win-rate-correspondence violations.

Policies are parametrized by per-query logits ``z`` with ``theta = softmax(z)``.
For any objective ``F`` with probability-space gradient ``g``, the logit
gradient is ``theta * (g - <theta, g>)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from . import kernels
from .env import BTClassifier, DomainError, Environment, Policy, ValidationError
from .objectives import (
    ObjectiveSpec,
    dpo_loss_offline,
    evaluate_objective,
    online_pair_dist,
    reverse_kl,
)
from .targets import avg_h, sft_preferred_target
from .winrate import IDENTITY, LOGIT, h_win_rate

DIVERGENCE_PATIENCE = 50
VIOLATION_TOL = 1e-12
# Objective changes below this relative size are rounding noise, not a worse step.
ROUNDING_SLACK = 1e-14


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    objective: float
    win_rate: float
    kl: float
    grad_norm: float


@dataclass(frozen=True)
class Trajectory:
    """Optimization history.

    ``status`` is ``"converged"`` (gradient norm at or below tolerance),
    ``"max_steps"``, or ``"diverged"`` (no trial step improved the objective
    for ``DIVERGENCE_PATIENCE`` consecutive attempts).
    """

    steps: tuple[StepRecord, ...]
    final_policy: Policy
    converged: bool
    status: str = "max_steps"

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])


@dataclass(frozen=True)
class ScanPoint:
    policy: Policy
    loss: float
    win_rate: float
    logit_win_rate: float | None
    kl_to_ref: float

    @property
    def infinite_loss(self) -> bool:
        return bool(np.isinf(self.loss))


# ---------------------------------------------------------------------------
# Exact gradients
# ---------------------------------------------------------------------------


def _softmax_grad(theta: np.ndarray, g: np.ndarray) -> np.ndarray:
    g = np.where(theta > 0, g, 0.0)
    return theta * (g - (theta * g).sum(axis=1, keepdims=True))


def _safe_log_ratio(theta: np.ndarray, ref: np.ndarray) -> np.ndarray:
    on = theta > 0
    out = np.zeros_like(theta)
    if np.any(on & (ref <= 0)):
        raise DomainError("policy puts mass where the reference has none")
    out[on] = np.log(theta[on]) - np.log(ref[on])
    return out


def _dpo_margin_grad(theta: np.ndarray, ref: np.ndarray, pref: np.ndarray, w: np.ndarray, beta: float) -> np.ndarray:
    """Logit gradient of the pair loss with pair weights ``w`` held fixed."""
    s = _safe_log_ratio(theta, ref)
    m = beta * (s[:, None, :] - s[:, :, None])
    d = np.where(w > 0, w * (1.0 / (1.0 + np.exp(-m)) - pref), 0.0)
    # m depends on z[y1] with +beta and on z[y0] with -beta.
    return beta * (d.sum(axis=1) - d.sum(axis=2))


def objective_gradient(spec: ObjectiveSpec, env: Environment, theta: Policy) -> np.ndarray:
    """Exact logit gradient of ``spec`` at ``theta`` (of the loss, for loss families).

    For ``dpo_online`` with ``spec.stop_gradient`` the pair distribution is
    treated as a constant; otherwise the sampling term is differentiated too.
    """
    theta = env.check_policy(theta, "theta")
    t = theta.probs
    qp = env.query_probs[:, None]
    f = spec.family
    if f == "wro":
        return qp * _softmax_grad(t, avg_h(env, spec.anchor, spec.h))
    if f == "wro_kl":
        ref = env.check_policy(spec.reference, "reference").probs
        g = avg_h(env, spec.anchor, spec.h, support=t > 0) - spec.beta * _safe_log_ratio(t, ref)
        return qp * _softmax_grad(t, g)
    if f == "sft":
        target = sft_preferred_target(env, spec.initial).probs
        return qp * (t - target)
    ref = env.check_policy(spec.reference, "reference").probs
    if f == "dpo_offline":
        return qp * _dpo_margin_grad(t, ref, env.pref, np.asarray(spec.pair_dist), spec.beta)
    w = online_pair_dist(theta, spec.reference)
    grad = _dpo_margin_grad(t, ref, env.pref, w, spec.beta)
    if not spec.stop_gradient:
        per_pair = dpo_loss_offline_terms(theta, spec.reference, env, spec.beta)
        g = (ref[:, :, None] * per_pair).sum(axis=1)
        grad = grad + _softmax_grad(t, g)
    return qp * grad


def dpo_loss_offline_terms(theta: Policy, reference: Policy, env: Environment, beta: float) -> np.ndarray:
    """Unweighted per-pair cross-entropy ``CE[q, y0, y1]`` (0 on padding)."""
    s = _safe_log_ratio(theta.probs, reference.probs)
    m = beta * (s[:, None, :] - s[:, :, None])
    pair_on = env.mask[:, :, None] & env.mask[:, None, :]
    ce = env.pref * np.logaddexp(0.0, -m) + (1.0 - env.pref) * np.logaddexp(0.0, m)
    return np.where(pair_on, ce, 0.0)


# ---------------------------------------------------------------------------
# Exact ascent
# ---------------------------------------------------------------------------


def _support(spec: ObjectiveSpec, env: Environment) -> np.ndarray:
    """Responses the optimizer may put mass on."""
    if spec.family in ("wro_kl", "dpo_offline", "dpo_online"):
        return env.mask & (env.check_policy(spec.reference, "reference").probs > 0)
    if spec.family == "sft":
        return env.mask & (env.check_policy(spec.initial, "initial").probs > 0)
    return env.mask


def _kl_reference(spec: ObjectiveSpec) -> Policy:
    for p in (spec.reference, spec.initial, spec.anchor):
        if p is not None:
            return p
    raise ValueError("objective has no policy to measure divergence against")


def _bb_step(s_vec: np.ndarray, d_change: np.ndarray) -> float | None:
    """Barzilai-Borwein step ``s.s / -s.dd`` for ascent directions; None if not positive."""
    curv = -float(np.dot(s_vec, d_change))
    if curv <= 0 or not np.isfinite(curv):
        return None
    return float(np.dot(s_vec, s_vec)) / curv


def exact_ascent(
    spec: ObjectiveSpec,
    env: Environment,
    init: Policy | None = None,
    step_size: float = 0.5,
    max_steps: int = 10_000,
    grad_tol: float = 1e-10,
    step_growth: float = 1.0,
    step_rule: str = "bb",
) -> Trajectory:
    """Gradient ascent (descent for losses) in softmax logits with backtracking.

    Each iteration tries a step and halves it until the objective does not
    worsen by more than rounding noise (relative ``ROUNDING_SLACK``), so the
    recorded objective is monotone up to that slack.  The trial step is
    ``step_size`` at first; afterwards it is the previous accepted step times
    ``step_growth`` (``step_rule="fixed"``) or the Barzilai-Borwein estimate
    from the last two iterates (``"bb"``, falling back to the fixed rule where
    the curvature estimate is not positive).

    Online DPO under ``stop_gradient`` backtracks on the loss with the pair
    distribution frozen at the current iterate, the surrogate its update
    direction descends.
    """
    if step_rule not in ("bb", "fixed"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    support = _support(spec, env)
    if init is None:
        init = Policy((support / support.sum(axis=1, keepdims=True)).astype(float), env.sizes)
    init = env.check_policy(init, "init")
    if np.any(support & (init.probs <= 0)):
        raise DomainError("initial policy must put positive mass on every optimizable response")
    sign = -1.0 if spec.is_loss else 1.0
    with np.errstate(divide="ignore"):
        z = np.where(support, np.log(np.where(support, init.probs, 1.0)), -np.inf)
    anchor = spec.win_rate_anchor
    kl_ref = _kl_reference(spec)
    frozen = spec.family == "dpo_online" and spec.stop_gradient

    def policy_of(z_):
        return Policy.from_logits(z_, env.sizes)

    def surrogate(theta_, pair_dist):
        if pair_dist is not None:
            return -dpo_loss_offline(theta_, spec.reference, pair_dist, env, spec.beta)
        return sign * evaluate_objective(spec, theta_, env)

    theta = policy_of(z)
    value = float(evaluate_objective(spec, theta, env))
    step = float(step_size)
    steps: list[StepRecord] = []
    status = "max_steps"
    prev = None
    for it in range(max_steps + 1):
        grad = sign * objective_gradient(spec, env, theta)
        gnorm = float(np.linalg.norm(grad))
        steps.append(
            StepRecord(it, value, h_win_rate(theta, anchor, env, IDENTITY), reverse_kl(theta, kl_ref, env.query_probs), gnorm)
        )
        if gnorm <= grad_tol:
            status = "converged"
            break
        if it == max_steps:
            break
        if prev is not None and step_rule == "bb":
            bb = _bb_step(z[support] - prev[0][support], grad[support] - prev[1][support])
            step = bb if bb is not None else step * step_growth
        elif prev is not None:
            step *= step_growth
        pair_dist = online_pair_dist(theta, spec.reference) if frozen else None
        current = surrogate(theta, pair_dist) if frozen else sign * value
        failures = 0
        while True:
            z_new = np.where(support, z + step * grad, -np.inf)
            cand = policy_of(z_new)
            val = surrogate(cand, pair_dist)
            if val >= current - ROUNDING_SLACK * (1.0 + abs(current)):
                break
            step *= 0.5
            failures += 1
            if failures >= DIVERGENCE_PATIENCE:
                status = "diverged"
                break
        if status == "diverged":
            break
        prev = (z, grad)
        z, theta = z_new, cand
        value = sign * val if not frozen else float(evaluate_objective(spec, theta, env))
    return Trajectory(tuple(steps), theta, status == "converged", status)


# ---------------------------------------------------------------------------
# Score-function estimator
# ---------------------------------------------------------------------------


def _sample_rows(cdf: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per sample from ``cdf[rows]``."""
    idx = (cdf[rows] < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def score_gradient(
    spec: ObjectiveSpec,
    env: Environment,
    theta: Policy,
    n_samples: int,
    subtract_anchor_term: bool = False,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample REINFORCE estimate of the logit gradient of a WRO / WRO-KL objective.

    Each sample draws ``x``, ``y1 ~ theta`` and ``y0 ~ anchor``; its payoff is
    ``h(pref[y0][y1])`` (minus ``beta * log theta/ref (y1)`` for WRO-KL) times
    the score ``e_{y1} - theta(x)``.  With ``subtract_anchor_term`` (logit h on
    a Bradley-Terry classifier) the payoff is the reward ``r(y1)`` instead,
    which drops a per-query constant and leaves the mean unchanged.

    Returns the sample mean and the per-coordinate sample variance.
    """
    if spec.family not in ("wro", "wro_kl"):
        raise ValidationError("score_gradient supports the wro and wro_kl families")
    if n_samples < 2:
        raise ValidationError("n_samples must be at least 2")
    if subtract_anchor_term and not (isinstance(env.classifier, BTClassifier) and spec.h.kind == LOGIT.kind):
        raise ValidationError("subtracting the anchor term requires logit h and a Bradley-Terry classifier")
    theta = env.check_policy(theta, "theta")
    anchor = env.check_policy(spec.anchor, "anchor")
    rng = np.random.default_rng(seed)
    x = _sample_rows(np.cumsum(env.query_probs)[None, :], np.zeros(n_samples, dtype=int), rng.random(n_samples))
    y1 = _sample_rows(np.cumsum(theta.probs, axis=1), x, rng.random(n_samples))
    if subtract_anchor_term:
        payoff = env.classifier.rewards[x, y1].copy()
    else:
        y0 = _sample_rows(np.cumsum(anchor.probs, axis=1), x, rng.random(n_samples))
        payoff = spec.h(env.pref[x, y0, y1])
    if spec.family == "wro_kl":
        ref = env.check_policy(spec.reference, "reference").probs
        payoff = payoff - spec.beta * _safe_log_ratio(theta.probs, ref)[x, y1]
    samples = np.zeros((n_samples,) + theta.probs.shape)
    rows = np.arange(n_samples)
    samples[rows, x, :] = -payoff[:, None] * theta.probs[x]
    samples[rows, x, y1] += payoff
    return samples.mean(axis=0), samples.var(axis=0, ddof=1)


# ---------------------------------------------------------------------------
# Correspondence violations
# ---------------------------------------------------------------------------


def _batch_metrics(thetas: np.ndarray, env: Environment, ref: np.ndarray, beta: float):
    """Online DPO loss, win rate, logit win rate and KL for a batch ``(B, Q, N)``."""
    qp = env.query_probs
    pair_on = env.mask[:, :, None] & env.mask[:, None, :]
    pref = env.pref
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.log(thetas) - np.log(ref)[None]
        m = beta * (s[:, :, None, :] - s[:, :, :, None])
        w = ref[None, :, :, None] * thetas[:, :, None, :]
        ce = pref * np.logaddexp(0.0, -m) + (1.0 - pref) * np.logaddexp(0.0, m)
        ce = np.where((w > 0) & pair_on, w * ce, 0.0)
        loss = ce.sum(axis=(2, 3)) @ qp
        kl_terms = np.where(thetas > 0, thetas * s, 0.0)
    win = np.einsum("qa,qac,bqc->bq", ref, pref, thetas) @ qp
    weights_on = (ref[:, :, None] > 0) & pair_on
    logit_ok = not np.any(weights_on & ((pref <= 0) | (pref >= 1)))
    logit_win = None
    if logit_ok:
        lp = np.where(weights_on, logit(np.where(weights_on, pref, 0.5)), 0.0)
        logit_win = np.einsum("qa,qac,bqc->bq", ref, lp, thetas) @ qp
    kl = kl_terms.sum(axis=2) @ qp
    return loss, win, logit_win, kl


def dpo_mismatch_scan(
    env: Environment,
    reference: Policy,
    n_draws: int,
    beta: float = 1.0,
    alpha: float = 1.0,
    seed: int = 0,
    keep_improving: bool = True,
    batch_size: int = 1024,
    max_batches: int | None = None,
) -> tuple[list[ScanPoint], int]:
    """Sample Dirichlet(alpha) policies and count positive-slope (loss, win rate) pairs.

    With ``keep_improving`` only draws whose online DPO loss is strictly below
    the reference's own loss are kept, until ``n_draws`` points are kept (or
    ``max_batches`` batches, default ``100 * ceil(n_draws / batch_size)``,
    are spent).  Win rates are identity-h against the reference.  Batch ``k``
    draws from the ``k``-th child of ``SeedSequence(seed)``.

    Returns the kept points and the number of violating pairs: pairs where
    one point has both lower loss and lower win rate (ties within 1e-12 excluded).
    """
    if n_draws < 2:
        raise ValidationError("n_draws must be at least 2")
    reference = env.check_policy(reference, "reference")
    ref = reference.probs
    ref_loss, *_ = _batch_metrics(ref[None], env, ref, beta)
    if max_batches is None:
        max_batches = 100 * (-(-n_draws // batch_size))
    children = np.random.SeedSequence(seed).spawn(max_batches)
    kept: list[tuple[np.ndarray, float, float, float | None, float]] = []
    for child in children:
        rng = np.random.default_rng(child)
        batch = np.zeros((batch_size,) + ref.shape)
        for q, n in enumerate(env.sizes):
            batch[:, q, :n] = rng.dirichlet(np.full(n, alpha), size=batch_size)
        batch /= batch.sum(axis=2, keepdims=True)
        loss, win, lwin, kl = _batch_metrics(batch, env, ref, beta)
        for b in range(batch_size):
            if keep_improving and not loss[b] < ref_loss[0]:
                continue
            kept.append((batch[b], loss[b], win[b], None if lwin is None else lwin[b], kl[b]))
            if len(kept) == n_draws:
                break
        if len(kept) == n_draws:
            break
    points = [ScanPoint(Policy(p, env.sizes), float(l), float(w), None if lw is None else float(lw), float(k)) for p, l, w, lw, k in kept]
    if len(points) < 2:
        return points, 0
    count = violation_summary(points).plain
    return points, count


@dataclass(frozen=True)
class ViolationSummary:
    plain: int
    regularized: int
    plain_witness: tuple[int, int] | None
    regularized_witness: tuple[int, int] | None


def violation_summary(points: list[ScanPoint], tol: float = VIOLATION_TOL) -> ViolationSummary:
    """Plain and regularized violation counts with the first witness pair of each.

    A witness ``(i, j)`` has point ``i`` with the lower loss.
    """
    loss = np.array([p.loss for p in points])
    win = np.array([p.win_rate for p in points])
    kl = np.array([p.kl_to_ref for p in points])
    plain, reg, pw, rw = kernels.count_violations(loss, win, kl, tol)

    def witness(w):
        return None if w[0] < 0 else (int(w[0]), int(w[1]))

    return ViolationSummary(int(plain), int(reg), witness(pw), witness(rw))


@dataclass(frozen=True)
class CorrespondenceVerdict:
    loss1: float
    loss2: float
    win1: float
    win2: float
    logit_win1: float | None
    logit_win2: float | None
    kl1: float
    kl2: float
    plain_violation: bool
    regularized_violation: bool


def correspondence_check(
    theta1: Policy, theta2: Policy, env: Environment, reference: Policy, beta: float = 1.0
) -> CorrespondenceVerdict:
    """Compare two policies on online DPO loss, win rate and KL to ``reference``.

    ``plain_violation``: theta1 has lower loss and lower win rate.
    ``regularized_violation``: additionally theta1 is farther from the reference.
    """
    ref = env.check_policy(reference, "reference").probs
    batch = np.stack([env.check_policy(theta1, "theta1").probs, env.check_policy(theta2, "theta2").probs])
    loss, win, lwin, kl = _batch_metrics(batch, env, ref, beta)
    tol = VIOLATION_TOL
    plain = bool(loss[1] - loss[0] > tol and win[1] - win[0] > tol)
    regularized = bool(plain and kl[0] - kl[1] > tol)
    return CorrespondenceVerdict(
        float(loss[0]),
        float(loss[1]),
        float(win[0]),
        float(win[1]),
        None if lwin is None else float(lwin[0]),
        None if lwin is None else float(lwin[1]),
        float(kl[0]),
        float(kl[1]),
        plain,
        regularized,
    )
