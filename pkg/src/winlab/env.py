"""Finite preference environments, preference classifiers and tabular policies.

Index convention (used by every module in the package)::

    pref[q][y0, y1] = p(l = 1 | x_q, y0, y1)

is the probability that the *second* response ``y1`` (generator side) is
preferred over the *first* response ``y0`` (anchor side).  Self-comparisons
are included in all expectations with ``pref[q][a, a] = 0.5``.

Queries may have different numbers of responses.  Internally everything is
stored in padded arrays of width ``N = max(sizes)``: policies are ``(Q, N)``
with zeros in the padding, classifiers are ``(Q, N, N)`` with 0.5 in the
padding.  Padding never carries probability mass, so it never contributes to
an expectation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

ANTISYMMETRY_TOL = 1e-9
SUM_TOL = 1e-12


class ValidationError(ValueError):
    """Input violates a structural invariant.  ``violations`` lists each one."""

    def __init__(self, violations: Sequence[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(ValueError):
    """A numerical quantity was requested outside its mathematical domain."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _pad_vectors(vectors: Sequence[Sequence[float]], fill: float = 0.0) -> tuple[np.ndarray, tuple[int, ...]]:
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vecs:
        raise ValidationError("at least one query is required")
    sizes = tuple(len(v) for v in vecs)
    out = np.full((len(vecs), max(sizes)), fill)
    for q, v in enumerate(vecs):
        out[q, : len(v)] = v
    return out, sizes


def _pad_matrices(mats: Sequence[Sequence[Sequence[float]]], fill: float = 0.5) -> tuple[np.ndarray, tuple[int, ...]]:
    ms = [np.asarray(m, dtype=np.float64) for m in mats]
    if not ms:
        raise ValidationError("at least one query is required")
    for q, m in enumerate(ms):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"classifier matrix for query {q} is not square (shape {m.shape})")
    sizes = tuple(m.shape[0] for m in ms)
    n = max(sizes)
    out = np.full((len(ms), n, n), fill)
    for q, m in enumerate(ms):
        out[q, : m.shape[0], : m.shape[0]] = m
    return out, sizes


def size_mask(sizes: Sequence[int], width: int | None = None) -> np.ndarray:
    """Boolean ``(Q, N)`` mask of real (non-padding) responses."""
    width = max(sizes) if width is None else width
    return np.arange(width)[None, :] < np.asarray(sizes)[:, None]


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-query probability vectors over that query's responses."""

    probs: np.ndarray
    sizes: tuple[int, ...]

    def __post_init__(self):
        probs = _readonly(self.probs)
        sizes = tuple(int(s) for s in self.sizes)
        if probs.ndim != 2 or probs.shape[0] != len(sizes) or probs.shape[1] < max(sizes):
            raise ValidationError(f"policy array shape {probs.shape} does not match sizes {sizes}")
        problems = []
        if not np.all(np.isfinite(probs)):
            problems.append("policy has non-finite entries")
        if np.any(probs < 0):
            problems.append("policy has negative entries")
        mask = size_mask(sizes, probs.shape[1])
        if np.any(probs[~mask] != 0):
            problems.append("policy puts mass outside the response set")
        sums = probs.sum(axis=1)
        for q in np.flatnonzero(np.abs(sums - 1.0) > SUM_TOL):
            problems.append(f"policy for query {q} sums to {sums[q]!r}, not 1")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def from_lists(cls, vectors: Sequence[Sequence[float]], normalize: bool = False) -> Policy:
        probs, sizes = _pad_vectors(vectors)
        if normalize:
            probs = probs / probs.sum(axis=1, keepdims=True)
        return cls(probs, sizes)

    @classmethod
    def uniform(cls, sizes: Sequence[int]) -> Policy:
        mask = size_mask(sizes)
        return cls(mask / mask.sum(axis=1, keepdims=True), tuple(sizes))

    @classmethod
    def point_mass(cls, sizes: Sequence[int], indices: Sequence[int]) -> Policy:
        probs = np.zeros((len(sizes), max(sizes)))
        probs[np.arange(len(sizes)), list(indices)] = 1.0
        return cls(probs, tuple(sizes))

    @classmethod
    def from_logits(cls, logits: np.ndarray, sizes: Sequence[int]) -> Policy:
        logits = np.where(size_mask(sizes, logits.shape[1]), logits, -np.inf)
        z = logits - logits.max(axis=1, keepdims=True)
        w = np.exp(z)
        return cls(w / w.sum(axis=1, keepdims=True), tuple(sizes))

    def __getitem__(self, q: int) -> np.ndarray:
        return self.probs[q, : self.sizes[q]]

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def to_lists(self) -> list[list[float]]:
        return [self[q].tolist() for q in range(len(self))]

    def mix(self, other: Policy, a: float) -> Policy:
        """Return ``a * self + (1 - a) * other``."""
        return Policy(a * self.probs + (1.0 - a) * other.probs, self.sizes)

    def total_variation(self, other: Policy, query_probs: np.ndarray | None = None) -> float:
        """Largest (or ``query_probs``-weighted) per-query total variation distance."""
        tv = 0.5 * np.abs(self.probs - other.probs).sum(axis=1)
        if query_probs is None:
            return float(tv.max())
        return float(np.dot(query_probs, tv))


def dirichlet_policy(sizes: Sequence[int], rng: np.random.Generator, alpha: float = 1.0) -> Policy:
    probs = np.zeros((len(sizes), max(sizes)))
    for q, n in enumerate(sizes):
        probs[q, :n] = rng.dirichlet(np.full(n, alpha))
    return Policy(probs / probs.sum(axis=1, keepdims=True), tuple(sizes))


# ---------------------------------------------------------------------------
# Classifiers
# ---------------------------------------------------------------------------


def classifier_violations(pref: np.ndarray, sizes: Sequence[int], tol: float = ANTISYMMETRY_TOL) -> list[str]:
    """List every broken classifier invariant, naming query and response pair."""
    problems = []
    for q, n in enumerate(sizes):
        m = pref[q, :n, :n]
        if not np.all(np.isfinite(m)):
            problems.append(f"non-finite entry in query {q}")
            continue
        for a, b in zip(*np.nonzero((m < 0) | (m > 1))):
            problems.append(f"entry outside [0, 1] at ({q}, {a}, {b}): {m[a, b]!r}")
        for a in np.flatnonzero(np.diagonal(m) != 0.5):
            problems.append(f"diagonal entry at ({q}, {a}, {a}) is {m[a, a]!r}, not 0.5")
        gap = np.abs(m + m.T - 1.0)
        for a, b in zip(*np.nonzero(np.triu(gap > tol, k=1))):
            problems.append(f"antisymmetry violated at ({q}, {a}, {b}): {m[a, b]!r} + {m[b, a]!r} != 1")
    return problems


@dataclass(frozen=True, eq=False)
class PreferenceClassifier:
    """Pairwise preference probabilities ``pref[q][y0, y1]`` (second argument wins)."""

    pref: np.ndarray
    sizes: tuple[int, ...]

    def __post_init__(self):
        pref = _readonly(self.pref)
        sizes = tuple(int(s) for s in self.sizes)
        if pref.ndim != 3 or pref.shape[0] != len(sizes) or pref.shape[1] != pref.shape[2]:
            raise ValidationError(f"classifier array shape {pref.shape} does not match sizes {sizes}")
        problems = classifier_violations(pref, sizes)
        if problems:
            raise ValidationError(problems)
        if np.any(pref[~_pair_mask(sizes, pref.shape[1])] != 0.5):
            pref = pref.copy()
            pref[~_pair_mask(sizes, pref.shape[1])] = 0.5
            pref.setflags(write=False)
        object.__setattr__(self, "pref", pref)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def from_matrices(cls, mats: Sequence[Sequence[Sequence[float]]]) -> PreferenceClassifier:
        pref, sizes = _pad_matrices(mats)
        return cls(pref, sizes)

    def __getitem__(self, q: int) -> np.ndarray:
        n = self.sizes[q]
        return self.pref[q, :n, :n]

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def width(self) -> int:
        return self.pref.shape[1]

    def to_lists(self) -> list[list[list[float]]]:
        return [self[q].tolist() for q in range(len(self))]


@dataclass(frozen=True, eq=False)
class BTClassifier(PreferenceClassifier):
    """Bradley-Terry classifier: ``pref[y0, y1] = sigmoid(r[y1] - r[y0])``."""

    rewards: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        rewards = _readonly(self.rewards)
        if rewards.shape != (len(self.sizes), self.width):
            raise ValidationError(f"reward array shape {rewards.shape} does not match classifier")
        object.__setattr__(self, "rewards", rewards)

    def reward_vector(self, q: int) -> np.ndarray:
        return self.rewards[q, : self.sizes[q]]


def _pair_mask(sizes: Sequence[int], width: int) -> np.ndarray:
    m = size_mask(sizes, width)
    return m[:, :, None] & m[:, None, :]


def _bt_pref(rewards: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    # Upper triangle from the sigmoid, lower triangle mirrored, so antisymmetry
    # holds to rounding and the diagonal is exactly 0.5.
    diff = rewards[:, None, :] - rewards[:, :, None]
    upper = expit(diff)
    iu = np.triu_indices(rewards.shape[1], k=1)
    pref = np.full_like(upper, 0.5)
    pref[:, iu[0], iu[1]] = upper[:, iu[0], iu[1]]
    pref[:, iu[1], iu[0]] = 1.0 - upper[:, iu[0], iu[1]]
    pref[~_pair_mask(sizes, rewards.shape[1])] = 0.5
    return pref


def make_bt_classifier(rewards: Sequence[Sequence[float]]) -> BTClassifier:
    """Bradley-Terry classifier from per-query reward vectors."""
    r, sizes = _pad_vectors(rewards)
    if not np.all(np.isfinite(r)):
        raise ValidationError("Bradley-Terry rewards must be finite")
    pref = _bt_pref(r, sizes)
    if np.any((pref <= 0) | (pref >= 1)):
        raise ValidationError("reward gaps too large: induced preference saturates at 0 or 1")
    return BTClassifier(pref, sizes, r)


def validate_classifier(raw: Sequence[Sequence[Sequence[float]]], sizes: Sequence[int] | None = None) -> PreferenceClassifier:
    """Check raw per-query matrices and return a classifier.

    Raises :class:`ValidationError` listing every violated invariant.
    """
    pref, got = _pad_matrices(raw)
    if sizes is not None and tuple(sizes) != got:
        raise ValidationError(f"classifier sizes {got} do not match response counts {tuple(sizes)}")
    return PreferenceClassifier(pref, got)


def fit_bt(
    classifier: PreferenceClassifier,
    pair_weights: Sequence[Sequence[Sequence[float]]] | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> BTClassifier:
    """Weighted maximum-likelihood Bradley-Terry fit to an exact classifier.

    Minimizes, per query, ``sum_{a != b} w[a, b] * CE(pref[a, b], sigmoid(r[b] - r[a]))``
    by Newton's method with the first reward pinned to 0.
    """
    Q, N = len(classifier), classifier.width
    if pair_weights is None:
        weights = _pair_mask(classifier.sizes, N).astype(float)
    else:
        weights, wsizes = _pad_matrices(pair_weights, fill=0.0)
        if wsizes != classifier.sizes:
            raise ValidationError("pair weights do not match classifier sizes")
        if np.any(weights < 0):
            raise ValidationError("pair weights must be nonnegative")
    weights = weights.copy()
    for q in range(Q):
        np.fill_diagonal(weights[q], 0.0)

    rewards = np.zeros((Q, N))
    for q, n in enumerate(classifier.sizes):
        rewards[q, :n] = _fit_bt_query(classifier[q], weights[q, :n, :n], q, tol, max_iter)
    return make_bt_classifier([rewards[q, :n] for q, n in enumerate(classifier.sizes)])


def _fit_bt_query(p: np.ndarray, w: np.ndarray, q: int, tol: float, max_iter: int) -> np.ndarray:
    n = p.shape[0]
    if n == 1:
        return np.zeros(1)
    active = w > 0
    if np.any(active & ((p <= 0) | (p >= 1))):
        a, b = np.argwhere(active & ((p <= 0) | (p >= 1)))[0]
        raise ValidationError(f"deterministic preference at ({q}, {a}, {b}) makes the Bradley-Terry fit unbounded")
    # Symmetrized weights: the (a, b) and (b, a) terms are the same likelihood term.
    ws = w + w.T
    # Target "wins" of column over row, weighted.
    ps = np.where(ws > 0, (w * p + w.T * (1 - p.T)) / np.where(ws > 0, ws, 1), 0.5)
    lap = np.diag(ws.sum(axis=1)) - ws
    if np.linalg.matrix_rank(lap) < n - 1:
        raise ValidationError(f"pair weights for query {q} do not connect all responses")

    def loss_grad_hess(r):
        d = r[None, :] - r[:, None]
        s = expit(d)
        logs = -np.logaddexp(0.0, -d)
        log1ms = -np.logaddexp(0.0, d)
        loss = -0.5 * np.sum(ws * (ps * logs + (1 - ps) * log1ms))
        resid = ws * (s - ps)  # d loss / d d_ab, halved symmetric
        grad = 0.5 * (resid.sum(axis=0) - resid.sum(axis=1))
        c = ws * s * (1 - s)
        hess = 0.5 * (np.diag(c.sum(axis=0) + c.sum(axis=1)) - c - c.T)
        return loss, grad[1:], hess[1:, 1:]

    r = np.zeros(n)
    for _ in range(max_iter):
        loss, g, h = loss_grad_hess(r)
        if np.linalg.norm(g) <= tol:
            return r
        step = np.linalg.solve(h, g)
        t = 1.0
        # Near the optimum loss differences are rounding noise; the convex
        # problem is then safely in Newton's quadratic region.
        while np.linalg.norm(g) > 1e-6:
            cand = r.copy()
            cand[1:] -= t * step
            if loss_grad_hess(cand)[0] <= loss + 1e-4 * t * (-g @ step) or t < 1e-12:
                break
            t *= 0.5
        cand = r.copy()
        cand[1:] -= t * step
        r = cand
    loss, g, _ = loss_grad_hess(r)
    if np.linalg.norm(g) > tol:
        raise DomainError(f"Bradley-Terry fit for query {q} did not converge (|grad| = {np.linalg.norm(g):.3e})")
    return r


def random_classifier(sizes: Sequence[int], rng: np.random.Generator) -> PreferenceClassifier:
    """Uniform upper-triangular entries in (0, 1), mirrored, 0.5 diagonal."""
    n = max(sizes)
    pref = np.full((len(sizes), n, n), 0.5)
    iu = np.triu_indices(n, k=1)
    for q in range(len(sizes)):
        u = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=len(iu[0]))
        pref[q, iu[0], iu[1]] = u
        pref[q, iu[1], iu[0]] = 1.0 - u
    pref[~_pair_mask(sizes, n)] = 0.5
    return PreferenceClassifier(pref, tuple(sizes))


def perturb_classifier(classifier: PreferenceClassifier, eta: float, seed: int) -> PreferenceClassifier:
    """Mix a classifier with a seeded random valid classifier: ``(1 - eta) * pref + eta * U``."""
    if not 0.0 <= eta <= 1.0:
        raise ValidationError(f"eta must lie in [0, 1], got {eta}")
    noise = random_classifier(classifier.sizes, np.random.default_rng(seed))
    pref = (1.0 - eta) * classifier.pref + eta * noise.pref
    for q in range(len(classifier)):
        np.fill_diagonal(pref[q], 0.5)
    return PreferenceClassifier(pref, classifier.sizes)


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FilterSpec:
    """Data filter acceptance probabilities ``filt[q][y1, y0, l] = p(f = 1 | x, y1, y0, l)``."""

    filt: np.ndarray
    sizes: tuple[int, ...]

    def __post_init__(self):
        filt = _readonly(self.filt)
        sizes = tuple(int(s) for s in self.sizes)
        n = max(sizes)
        if filt.shape != (len(sizes), n, n, 2):
            raise ValidationError(f"filter array shape {filt.shape} does not match sizes {sizes}")
        problems = []
        if not np.all(np.isfinite(filt)) or np.any((filt < 0) | (filt > 1)):
            problems.append("filter entries must lie in [0, 1]")
        pm = _pair_mask(sizes, n)
        for q in range(len(sizes)):
            if not np.any(filt[q][pm[q]] > 0):
                problems.append(f"filter rejects every data point for query {q}")
        if problems:
            raise ValidationError(problems)
        filt = filt.copy()
        filt[~pm] = 0.0
        filt.setflags(write=False)
        object.__setattr__(self, "filt", filt)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def constant(cls, sizes: Sequence[int], value: float = 1.0) -> FilterSpec:
        n = max(sizes)
        return cls(np.full((len(sizes), n, n, 2), value), tuple(sizes))

    @classmethod
    def preferred(cls, sizes: Sequence[int]) -> FilterSpec:
        """Keep the generator sample only when it won (``l = 1``)."""
        n = max(sizes)
        filt = np.zeros((len(sizes), n, n, 2))
        filt[..., 1] = 1.0
        return cls(filt, tuple(sizes))

    @classmethod
    def pref_threshold(cls, classifier: PreferenceClassifier, threshold: float) -> FilterSpec:
        """Accept winning samples whose preference probability is at least ``threshold``."""
        # filt[y1, y0, 1] uses pref[y0, y1]
        keep = np.swapaxes(classifier.pref, 1, 2) >= threshold
        filt = np.zeros(keep.shape + (2,))
        filt[..., 1] = keep
        return cls(filt, classifier.sizes)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Environment:
    """Query distribution, per-query response sets and a preference classifier."""

    queries: tuple[str, ...]
    query_probs: np.ndarray
    responses: tuple[tuple[str, ...], ...]
    classifier: PreferenceClassifier

    def __post_init__(self):
        queries = tuple(str(q) for q in self.queries)
        responses = tuple(tuple(str(r) for r in rs) for rs in self.responses)
        probs = _readonly(np.ravel(self.query_probs))
        problems = []
        if len(set(queries)) != len(queries):
            problems.append("query identifiers must be unique")
        if not (len(queries) == len(responses) == probs.shape[0] == len(self.classifier)):
            problems.append(
                f"{len(queries)} queries, {len(responses)} response lists, {probs.shape[0]} query probabilities "
                f"and {len(self.classifier)} classifier blocks do not agree"
            )
        else:
            for q, rs in enumerate(responses):
                if not rs:
                    problems.append(f"query {queries[q]!r} has no responses")
                elif len(rs) != self.classifier.sizes[q]:
                    problems.append(
                        f"query {queries[q]!r} has {len(rs)} responses but classifier block is {self.classifier.sizes[q]}x{self.classifier.sizes[q]}"
                    )
                if len(set(rs)) != len(rs):
                    problems.append(f"response identifiers for query {queries[q]!r} must be unique")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            problems.append("query probabilities must be finite and nonnegative")
        elif abs(probs.sum() - 1.0) > SUM_TOL:
            problems.append(f"query probabilities sum to {probs.sum()!r}, not 1")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "query_probs", probs)

    @classmethod
    def build(
        cls,
        classifier: PreferenceClassifier,
        query_probs: Sequence[float] | None = None,
        queries: Sequence[str] | None = None,
        responses: Sequence[Sequence[str]] | None = None,
    ) -> Environment:
        """Environment with default identifiers (``q0``, ``y0``...) and uniform queries."""
        Q = len(classifier)
        if queries is None:
            queries = [f"q{i}" for i in range(Q)]
        if responses is None:
            responses = [[f"y{j}" for j in range(n)] for n in classifier.sizes]
        if query_probs is None:
            query_probs = np.full(Q, 1.0 / Q)
        return cls(tuple(queries), np.asarray(query_probs, dtype=float), tuple(map(tuple, responses)), classifier)

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.classifier.sizes

    @property
    def width(self) -> int:
        return self.classifier.width

    @property
    def pref(self) -> np.ndarray:
        return self.classifier.pref

    @property
    def mask(self) -> np.ndarray:
        return size_mask(self.sizes, self.width)

    def __len__(self) -> int:
        return len(self.queries)

    def with_classifier(self, classifier: PreferenceClassifier) -> Environment:
        return Environment(self.queries, self.query_probs, self.responses, classifier)

    def with_query_probs(self, query_probs: Sequence[float]) -> Environment:
        return Environment(self.queries, np.asarray(query_probs, dtype=float), self.responses, self.classifier)

    def check_policy(self, policy: Policy, role: str = "policy") -> Policy:
        if policy.sizes != self.sizes:
            raise ValidationError(f"{role} sizes {policy.sizes} do not match environment sizes {self.sizes}")
        if policy.width != self.width:
            policy = Policy(policy.probs[:, : self.width], policy.sizes)
        return policy

    def uniform_policy(self) -> Policy:
        return Policy.uniform(self.sizes)


def random_environment(
    rng: np.random.Generator,
    max_queries: int = 5,
    max_responses: int = 8,
    min_responses: int = 1,
    bt: bool = False,
    reward_scale: float = 2.0,
) -> Environment:
    """Random environment for property tests and sweeps.

    Query probabilities are Dirichlet(1); classifiers are either uniform random
    valid matrices or Bradley-Terry with normal rewards.
    """
    Q = int(rng.integers(1, max_queries + 1))
    sizes = tuple(int(s) for s in rng.integers(min_responses, max_responses + 1, size=Q))
    if bt:
        clf = make_bt_classifier([rng.normal(0.0, reward_scale, size=n) for n in sizes])
    else:
        clf = random_classifier(sizes, rng)
    return Environment.build(clf, query_probs=rng.dirichlet(np.ones(Q)))
