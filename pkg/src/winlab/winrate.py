"""Grounded evaluation: h-transforms, exact and Monte-Carlo h-win rates."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logit as _logit

from .env import DomainError, Environment, Policy, dirichlet_policy

__all__ = [
    "HTransform",
    "IDENTITY",
    "LOG",
    "LOGIT",
    "h_win_rate",
    "mc_win_rate",
    "groundedness_residuals",
    "GroundednessResult",
]


@dataclass(frozen=True)
class HTransform:
    """Strictly increasing map applied to preference probabilities.

    ``open_domain`` means the map is only defined on (0, 1); otherwise on [0, 1].
    ``clamp`` (off by default) clips inputs to ``[clamp, 1 - clamp]`` instead of
    raising on out-of-domain values.
    """

    kind: str
    func: Callable[[np.ndarray], np.ndarray]
    open_domain: bool
    clamp: float | None = None

    def __call__(self, p, mask: np.ndarray | None = None) -> np.ndarray:
        """Apply to ``p``; entries where ``mask`` is False are returned as 0."""
        p = np.asarray(p, dtype=np.float64)
        if mask is None:
            mask = np.ones(p.shape, dtype=bool)
        vals = p[mask]
        if self.clamp is not None:
            vals = np.clip(vals, self.clamp, 1.0 - self.clamp)
        if self.open_domain:
            bad = (vals <= 0.0) | (vals >= 1.0)
        else:
            bad = (vals < 0.0) | (vals > 1.0)
        if np.any(bad):
            raise DomainError(
                f"h={self.kind} is undefined at preference {vals[bad][0]!r}; "
                "use a clamped transform or remove deterministic preferences"
            )
        out = np.zeros(p.shape)
        out[mask] = self.func(vals)
        return out

    def with_clamp(self, eps: float = 1e-12) -> HTransform:
        return HTransform(self.kind, self.func, self.open_domain, eps)

    @classmethod
    def custom(cls, name: str, func: Callable[[np.ndarray], np.ndarray], open_domain: bool = True) -> HTransform:
        return cls(name, func, open_domain)

    @classmethod
    def from_name(cls, name: str) -> HTransform:
        try:
            return _NAMED[name]
        except KeyError:
            raise ValueError(f"unknown h transform {name!r}; expected one of {sorted(_NAMED)}") from None


def _identity(p):
    return p


IDENTITY = HTransform("identity", _identity, open_domain=False)
LOG = HTransform("log", np.log, open_domain=True)
LOGIT = HTransform("logit", _logit, open_domain=True)
_NAMED = {"identity": IDENTITY, "log": LOG, "logit": LOGIT}


def pair_weights(generator: Policy, anchor: Policy) -> np.ndarray:
    """``W[q, y0, y1] = anchor(y0 | q) * generator(y1 | q)``."""
    return anchor.probs[:, :, None] * generator.probs[:, None, :]


def per_query_win_rate(generator: Policy, anchor: Policy, env: Environment, h: HTransform = IDENTITY) -> np.ndarray:
    generator = env.check_policy(generator, "generator")
    anchor = env.check_policy(anchor, "anchor")
    w = pair_weights(generator, anchor)
    hp = h(env.pref, w > 0)
    return np.einsum("qab,qab->q", w, hp)


def h_win_rate(generator: Policy, anchor: Policy, env: Environment, h: HTransform = IDENTITY) -> float:
    """Exact h-win rate of ``generator`` over ``anchor`` by full enumeration."""
    return float(np.dot(env.query_probs, per_query_win_rate(generator, anchor, env, h)))


def _mc_shard(generator, anchor, env, h, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.choice(len(env), size=n, p=env.query_probs)
    u1 = rng.random(n)
    u0 = rng.random(n)
    c1 = np.cumsum(generator.probs, axis=1)
    c0 = np.cumsum(anchor.probs, axis=1)
    sizes = np.asarray(env.sizes)
    # Inverse-CDF draws; clip guards against cumulative sums a hair below 1.
    y1 = np.minimum((u1[:, None] >= c1[x]).sum(axis=1), sizes[x] - 1)
    y0 = np.minimum((u0[:, None] >= c0[x]).sum(axis=1), sizes[x] - 1)
    return h(env.pref[x, y0, y1])


def mc_win_rate(
    generator: Policy,
    anchor: Policy,
    env: Environment,
    h: HTransform = IDENTITY,
    n_samples: int = 10_000,
    seed: int = 0,
    shards: int = 1,
    workers: int = 1,
) -> tuple[float, float]:
    """Monte-Carlo h-win rate from i.i.d. ``(x, y1, y0)`` draws.

    Returns ``(estimate, standard_error)``; the standard error is NaN when
    ``n_samples == 1``.  With ``shards > 1`` the draws are split into shards
    seeded from ``SeedSequence(seed).spawn(shards)``, so the result depends
    only on ``(seed, shards)`` and not on ``workers``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    generator = env.check_policy(generator, "generator")
    anchor = env.check_policy(anchor, "anchor")
    if shards == 1:
        vals = _mc_shard(generator, anchor, env, h, n_samples, seed)
    else:
        counts = [n_samples // shards + (i < n_samples % shards) for i in range(shards)]
        seeds = np.random.SeedSequence(seed).spawn(shards)
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            parts = list(pool.map(lambda a: _mc_shard(generator, anchor, env, h, *a), zip(counts, seeds)))
        vals = np.concatenate(parts)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return est, se


# ---------------------------------------------------------------------------
# Groundedness harness
# ---------------------------------------------------------------------------

Evaluator = Callable[[Policy, Policy, Environment], float]
MIX_WEIGHTS = (0.0, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class GroundednessResult:
    prevalence_residual: float
    preference_flag: bool
    generator_residual: float
    anchor_residual: float
    query_residual: float
    singleton_points: tuple[tuple[float, float], ...]


def _random_policy(env: Environment, rng: np.random.Generator) -> Policy:
    return dirichlet_policy(env.sizes, rng)


def _residual(v_mix: float, v1: float, v2: float, a: float) -> float:
    expected = a * v1 + (1.0 - a) * v2
    if np.isinf(v_mix) or np.isinf(expected):
        return 0.0 if v_mix == expected else float("inf")
    return abs(v_mix - expected)


def _monotone_image(points: list[tuple[float, float]], tol: float) -> bool:
    """True iff value is a strictly increasing function of preference over ``points``."""
    pts = sorted(points)
    for (p1, v1), (p2, v2) in zip(pts, pts[1:]):
        if not (np.isfinite(v1) and np.isfinite(v2)):
            if p2 - p1 <= tol and v1 == v2:
                continue
            if p2 - p1 > tol and v2 > v1:
                continue
            return False
        if p2 - p1 <= tol:
            if abs(v2 - v1) > tol:
                return False
        elif v2 - v1 <= tol:
            return False
    return True


def groundedness_residuals(
    evaluator: Evaluator,
    env: Environment,
    trials: int = 200,
    seed: int = 0,
    tol: float = 1e-12,
) -> GroundednessResult:
    """Probe preference- and prevalence-consistency of an evaluation.

    Prevalence: for random policy pairs and mixture weights in ``{0, .25, .5, 1}``,
    the largest ``|phi(a p1 + (1-a) p2) - a phi(p1) - (1-a) phi(p2)|`` over
    mixtures of the generator, the anchor, and the query distribution.

    Preference: evaluate at singleton ``(query, anchor response, generator
    response)`` triples and check the values are a strictly increasing image
    of the preference probability.
    """
    rng = np.random.default_rng(seed)
    res = {"generator": 0.0, "anchor": 0.0, "query": 0.0}
    for t in range(trials):
        a = MIX_WEIGHTS[t % len(MIX_WEIGHTS)]
        g1, g2, an1, an2 = (_random_policy(env, rng) for _ in range(4))
        v = evaluator(g1.mix(g2, a), an1, env)
        res["generator"] = max(res["generator"], _residual(v, evaluator(g1, an1, env), evaluator(g2, an1, env), a))
        v = evaluator(g1, an1.mix(an2, a), env)
        res["anchor"] = max(res["anchor"], _residual(v, evaluator(g1, an1, env), evaluator(g1, an2, env), a))
        qp1 = rng.dirichlet(np.ones(len(env)))
        qp2 = rng.dirichlet(np.ones(len(env)))
        e1, e2 = env.with_query_probs(qp1), env.with_query_probs(qp2)
        emix = env.with_query_probs(a * qp1 + (1.0 - a) * qp2)
        v = evaluator(g1, an1, emix)
        res["query"] = max(res["query"], _residual(v, evaluator(g1, an1, e1), evaluator(g1, an1, e2), a))

    points = []
    for _ in range(trials):
        q = int(rng.integers(len(env)))
        n = env.sizes[q]
        y0, y1 = int(rng.integers(n)), int(rng.integers(n))
        qp = np.zeros(len(env))
        qp[q] = 1.0
        idx0 = [0] * len(env)
        idx1 = [0] * len(env)
        idx0[q], idx1[q] = y0, y1
        gen = Policy.point_mass(env.sizes, idx1)
        anc = Policy.point_mass(env.sizes, idx0)
        points.append((float(env.pref[q, y0, y1]), float(evaluator(gen, anc, env.with_query_probs(qp)))))
    flag = _monotone_image(points, max(tol, 1e-12))
    return GroundednessResult(
        prevalence_residual=max(res.values()),
        preference_flag=flag,
        generator_residual=res["generator"],
        anchor_residual=res["anchor"],
        query_residual=res["query"],
        singleton_points=tuple(points),
    )
