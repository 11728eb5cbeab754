"""Slow, loop-based reference computations used as test oracles.

Nothing here imports the package's numerical code; every quantity is
recomputed from nested Python lists with the ``math`` module.
"""
from __future__ import annotations

import math


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def log_sigmoid(x: float) -> float:
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def bt_matrix(rewards: list[float]) -> list[list[float]]:
    n = len(rewards)
    return [[0.5 if a == b else sigmoid(rewards[b] - rewards[a]) for b in range(n)] for a in range(n)]


def win_rate(prefs, qprobs, gen, anc, h=lambda p: p) -> float:
    total = 0.0
    for q, m in enumerate(prefs):
        s = 0.0
        for y1, g in enumerate(gen[q]):
            for y0, a in enumerate(anc[q]):
                if g * a > 0:
                    s += g * a * h(m[y0][y1])
        total += qprobs[q] * s
    return total


def avg_pref(m, anc) -> list[float]:
    n = len(m)
    return [sum(anc[y0] * m[y0][y1] for y0 in range(n)) for y1 in range(n)]


def normalize(w):
    z = sum(w)
    return [v / z for v in w]


def wro_kl_target(m, anchor, ref, beta, h=lambda p: p):
    n = len(m)
    tilt = []
    for y in range(n):
        if ref[y] > 0:
            tilt.append(sum(anchor[y0] * h(m[y0][y]) for y0 in range(n) if anchor[y0] > 0) / beta)
        else:
            tilt.append(None)
    top = max(t for t in tilt if t is not None)
    return normalize([ref[y] * math.exp(tilt[y] - top) if tilt[y] is not None else 0.0 for y in range(n)])


def sft_target(m, init):
    ap = avg_pref(m, init)
    return normalize([init[y] * ap[y] for y in range(len(m))])


def filter_target(m, init, filt):
    """``filt[y1][y0][l]``."""
    n = len(m)
    acc = []
    for y1 in range(n):
        s = 0.0
        for y0 in range(n):
            p1 = m[y0][y1]
            s += init[y0] * (p1 * filt[y1][y0][1] + (1 - p1) * filt[y1][y0][0])
        acc.append(init[y1] * s)
    return normalize(acc)


def kl(p, q) -> float:
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def dpo_pair_loss(m, theta, ref, beta, weights) -> float:
    """``sum w[y0][y1] * CE(pref, sigmoid(beta * (s1 - s0)))`` for one query."""
    n = len(m)
    s = [math.log(theta[y] / ref[y]) for y in range(n)]
    total = 0.0
    for y0 in range(n):
        for y1 in range(n):
            w = weights[y0][y1]
            if w == 0:
                continue
            margin = beta * (s[y1] - s[y0])
            p = m[y0][y1]
            total += w * -(p * log_sigmoid(margin) + (1 - p) * log_sigmoid(-margin))
    return total


def dpo_online_loss(m, theta, ref, beta) -> float:
    n = len(m)
    w = [[ref[y0] * theta[y1] for y1 in range(n)] for y0 in range(n)]
    return dpo_pair_loss(m, theta, ref, beta, w)


def variance(weights, values) -> float:
    mu = sum(w * v for w, v in zip(weights, values))
    return sum(w * (v - mu) ** 2 for w, v in zip(weights, values))


def numeric_gradient(f, x, eps=1e-6):
    """Central differences of ``f`` over a flat list ``x``."""
    g = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += eps
        xm[i] -= eps
        g.append((f(xp) - f(xm)) / (2 * eps))
    return g


def softmax(z):
    top = max(z)
    e = [math.exp(v - top) for v in z]
    return normalize(e)
