"""Pure-Python reference kernels; same semantics as the compiled ``_ext``."""
from __future__ import annotations

import numpy as np


def count_violations(loss, win, kl, tol):
    """Count pairs where the lower-loss point also has the lower win rate.

    Returns ``(plain, regularized, plain_witness, regularized_witness)``.
    """
    loss = np.asarray(loss, dtype=float)
    win = np.asarray(win, dtype=float)
    kl = np.asarray(kl, dtype=float)
    n = loss.shape[0]
    plain = reg = 0
    pw = rw = (-1, -1)
    for i in range(n - 1):
        dl = loss[i + 1 :] - loss[i]
        dw = win[i + 1 :] - win[i]
        up = (dl > tol) & (dw > tol)
        down = (dl < -tol) & (dw < -tol)
        hit = np.flatnonzero(up | down)
        if hit.size == 0:
            continue
        j = hit + i + 1
        lo = np.where(up[hit], i, j)
        hi = np.where(up[hit], j, i)
        plain += hit.size
        if pw[0] < 0:
            pw = (int(lo[0]), int(hi[0]))
        regular = kl[lo] - kl[hi] > tol
        reg += int(regular.sum())
        if rw[0] < 0 and regular.any():
            k = int(np.flatnonzero(regular)[0])
            rw = (int(lo[k]), int(hi[k]))
    return plain, reg, pw, rw


def fictitious_play(H, P, sizes, qprobs, max_iters, tol):
    """Simultaneous fictitious play on every query of a symmetric WRO game."""
    H = np.asarray(H, dtype=float)
    P = np.asarray(P, dtype=float)
    Q, N = H.shape[0], H.shape[1]
    sizes = np.asarray(sizes)
    mask = np.arange(N)[None, :] < sizes[:, None]
    neg = np.where(mask, 0.0, -np.inf)
    rows = np.arange(Q)
    cA = np.zeros((Q, N))
    cB = np.zeros((Q, N))
    hA = np.zeros((Q, N))
    hB = np.zeros((Q, N))
    pA = np.zeros((Q, N))
    pB = np.zeros((Q, N))
    ex, pay_a, pay_b = [], [], []

    opening = np.where(mask, np.where(mask[:, :, None], H, 0.0).sum(axis=1), -np.inf)
    a = opening.argmax(axis=1)
    b = a.copy()
    for k in range(max_iters):
        cA[rows, a] += 1.0
        cB[rows, b] += 1.0
        hA += H[rows, b, :]
        hB += H[rows, a, :]
        pA += P[rows, b, :]
        pB += P[rows, a, :]
        t = k + 1.0
        brA = (pA + neg).max(axis=1)
        brB = (pB + neg).max(axis=1)
        exA = float(np.dot(qprobs, brA / t - (cA * pA).sum(axis=1) / (t * t)))
        exB = float(np.dot(qprobs, brB / t - (cB * pB).sum(axis=1) / (t * t)))
        ex.append(max(exA, exB))
        pay_a.append(float(np.dot(qprobs, (cA * hA).sum(axis=1) / (t * t))))
        pay_b.append(float(np.dot(qprobs, (cB * hB).sum(axis=1) / (t * t))))
        if ex[-1] <= tol:
            break
        a = (hA + neg).argmax(axis=1)
        b = (hB + neg).argmax(axis=1)
    return cA, cB, np.array(ex), np.array(pay_a), np.array(pay_b)
