"""Two-player WRO games: each policy maximizes its h-win rate against the other.

The game splits into independent per-query games; the compiled kernel runs
all of them in one loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .env import Environment, Policy, ValidationError
from .objectives import reverse_kl
from .targets import avg_h, avg_pref, wro_kl_target
from .winrate import IDENTITY, HTransform, h_win_rate

TIE_TOL = 1e-12


@dataclass(frozen=True)
class GameState:
    policy_a: Policy
    policy_b: Policy
    payoff_a: float
    payoff_b: float
    exploitability: float


@dataclass(frozen=True)
class FictitiousPlayResult:
    """Per-iteration trace plus the final averaged profile.

    ``exploitability[k]``, ``payoff_a[k]`` and ``payoff_b[k]`` describe the
    averaged policies after ``k + 1`` rounds.
    """

    exploitability: np.ndarray
    payoff_a: np.ndarray
    payoff_b: np.ndarray
    final: GameState
    converged: bool

    @property
    def iterations(self) -> int:
        return int(self.exploitability.shape[0])


def best_response(opponent: Policy, env: Environment, h: HTransform = IDENTITY) -> tuple[Policy, list[tuple[int, ...]]]:
    """Vertex best response per query, lowest index on ties.

    Returns the point-mass policy and, per query, every response within 1e-12
    of the best value.
    """
    ah = np.where(env.mask, avg_h(env, opponent, h), -np.inf)
    top = ah.max(axis=1, keepdims=True)
    ties = [tuple(int(i) for i in np.flatnonzero(row >= t - TIE_TOL)) for row, t in zip(ah, top[:, 0])]
    return Policy.point_mass(env.sizes, [t[0] for t in ties]), ties


def _gap(player: Policy, opponent: Policy, env: Environment) -> float:
    ap = np.where(env.mask, avg_pref(env, opponent), -np.inf)
    best = ap.max(axis=1)
    current = (player.probs * np.where(env.mask, ap, 0.0)).sum(axis=1)
    return float(np.dot(env.query_probs, best - current))


def exploitability(state: GameState, env: Environment) -> float:
    """Largest identity-h win-rate gain either player gets by deviating to a vertex."""
    gap = max(_gap(state.policy_a, state.policy_b, env), _gap(state.policy_b, state.policy_a, env))
    return max(gap, 0.0)


def game_state(policy_a: Policy, policy_b: Policy, env: Environment, h: HTransform = IDENTITY) -> GameState:
    state = GameState(policy_a, policy_b, h_win_rate(policy_a, policy_b, env, h), h_win_rate(policy_b, policy_a, env, h), 0.0)
    return GameState(policy_a, policy_b, state.payoff_a, state.payoff_b, exploitability(state, env))


def fictitious_play(
    env: Environment,
    h: HTransform = IDENTITY,
    max_iters: int = 10_000,
    exploit_tol: float = 1e-2,
    beta: float | None = None,
    reference: Policy | None = None,
) -> FictitiousPlayResult:
    """Simultaneous fictitious play on the averaged opponent.

    Both players open with a best response to a uniform opponent, then each
    round best-responds to the other's empirical average.  Stops once the
    exploitability of the averaged profile is at most ``exploit_tol``.

    With ``beta`` set, each payoff carries ``-beta * KL(policy || reference)``
    and the best response is the closed-form WRO-KL target; exploitability is
    then the gap in that regularized payoff.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be at least 1")
    if beta is not None:
        return _regularized_play(env, h, max_iters, exploit_tol, beta, env.uniform_policy() if reference is None else reference)
    pair_on = env.mask[:, :, None] & env.mask[:, None, :]
    H = h(env.pref, pair_on)  # H[q, opp, me]: the generator side is the second index
    P = np.where(pair_on, env.pref, 0.0)
    cA, cB, ex, pay_a, pay_b = kernels.fictitious_play(H, P, env.sizes, env.query_probs, max_iters, exploit_tol)
    pa = Policy(cA / cA.sum(axis=1, keepdims=True), env.sizes)
    pb = Policy(cB / cB.sum(axis=1, keepdims=True), env.sizes)
    ex = np.maximum(ex, 0.0)
    final = GameState(pa, pb, float(pay_a[-1]), float(pay_b[-1]), float(ex[-1]))
    return FictitiousPlayResult(ex, pay_a, pay_b, final, bool(ex[-1] <= exploit_tol))


def _regularized_value(me: Policy, opp: Policy, env, h, beta, reference) -> float:
    return h_win_rate(me, opp, env, h) - beta * reverse_kl(me, reference, env.query_probs)


def _regularized_play(env, h, max_iters, exploit_tol, beta, reference) -> FictitiousPlayResult:
    reference = env.check_policy(reference, "reference")
    uni = env.uniform_policy()
    sum_a = wro_kl_target(env, uni, reference, h, beta).probs.copy()
    sum_b = sum_a.copy()
    ex, pay_a, pay_b = [], [], []
    for _ in range(max_iters):
        pa = Policy(sum_a / sum_a.sum(axis=1, keepdims=True), env.sizes)
        pb = Policy(sum_b / sum_b.sum(axis=1, keepdims=True), env.sizes)
        br_a = wro_kl_target(env, pb, reference, h, beta)
        br_b = wro_kl_target(env, pa, reference, h, beta)
        va = _regularized_value(pa, pb, env, h, beta, reference)
        vb = _regularized_value(pb, pa, env, h, beta, reference)
        gap_a = _regularized_value(br_a, pb, env, h, beta, reference) - va
        gap_b = _regularized_value(br_b, pa, env, h, beta, reference) - vb
        ex.append(max(gap_a, gap_b, 0.0))
        pay_a.append(va)
        pay_b.append(vb)
        if ex[-1] <= exploit_tol:
            break
        sum_a += br_a.probs
        sum_b += br_b.probs
    final = GameState(pa, pb, pay_a[-1], pay_b[-1], ex[-1])
    return FictitiousPlayResult(np.array(ex), np.array(pay_a), np.array(pay_b), final, bool(ex[-1] <= exploit_tol))
