# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Semantics mirror ``winlab._kernels_py`` exactly."""
import numpy as np

cimport numpy as cnp
from libc.math cimport isnan

cnp.import_array()


def count_violations(const double[::1] loss, const double[::1] win, const double[::1] kl, double tol):
    """Count pairs where the lower-loss point also has the lower win rate.

    Returns ``(plain, regularized, plain_witness, regularized_witness)``; a
    regularized violation additionally has the lower-loss point farther from
    the reference (larger ``kl``).  Witnesses are ``(i, j)`` with ``i`` the
    lower-loss point, or ``(-1, -1)``.
    """
    cdef Py_ssize_t n = loss.shape[0]
    cdef Py_ssize_t i, j, lo, hi
    cdef long long plain = 0, reg = 0
    cdef Py_ssize_t pi = -1, pj = -1, ri = -1, rj = -1
    cdef double dl, dw
    for i in range(n):
        for j in range(i + 1, n):
            dl = loss[j] - loss[i]
            dw = win[j] - win[i]
            if isnan(dl) or isnan(dw):
                continue
            if dl > tol and dw > tol:
                lo = i
                hi = j
            elif dl < -tol and dw < -tol:
                lo = j
                hi = i
            else:
                continue
            plain += 1
            if pi < 0:
                pi = lo
                pj = hi
            if kl[lo] - kl[hi] > tol:
                reg += 1
                if ri < 0:
                    ri = lo
                    rj = hi
    return plain, reg, (pi, pj), (ri, rj)


def fictitious_play(
    const double[:, :, ::1] H,
    const double[:, :, ::1] P,
    const long[::1] sizes,
    const double[::1] qprobs,
    Py_ssize_t max_iters,
    double tol,
):
    """Simultaneous fictitious play on every query of a symmetric WRO game.

    ``H[q, opp, me]`` is the payoff to a player choosing ``me`` against ``opp``;
    ``P`` is the identity-h payoff used for exploitability.  Both players open
    with a best response to a uniform opponent.  Returns counts for both
    players and per-iteration exploitability and payoffs of the averaged
    policies.
    """
    cdef Py_ssize_t Q = H.shape[0], N = H.shape[1]
    cdef cnp.ndarray[double, ndim=2] cA_arr = np.zeros((Q, N))
    cdef cnp.ndarray[double, ndim=2] cB_arr = np.zeros((Q, N))
    cdef double[:, ::1] cA = cA_arr
    cdef double[:, ::1] cB = cB_arr
    cdef double[:, ::1] hA = np.zeros((Q, N))
    cdef double[:, ::1] hB = np.zeros((Q, N))
    cdef double[:, ::1] pA = np.zeros((Q, N))
    cdef double[:, ::1] pB = np.zeros((Q, N))
    cdef cnp.ndarray[double, ndim=1] ex_arr = np.zeros(max_iters)
    cdef cnp.ndarray[double, ndim=1] pa_arr = np.zeros(max_iters)
    cdef cnp.ndarray[double, ndim=1] pb_arr = np.zeros(max_iters)
    cdef double[::1] ex = ex_arr
    cdef double[::1] pay_a = pa_arr
    cdef double[::1] pay_b = pb_arr
    cdef long[::1] a = np.zeros(Q, dtype=np.int_)
    cdef long[::1] b = np.zeros(Q, dtype=np.int_)
    cdef Py_ssize_t q, y, k, n, best, recorded = 0
    cdef double t, s, sB, bestv, exA, exB, curA, curB, brA, brB, vA, vB

    # Opening move: best response to a uniform opponent.
    for q in range(Q):
        n = sizes[q]
        best = 0
        bestv = -1e300
        for y in range(n):
            s = 0.0
            for k in range(n):
                s += H[q, k, y]
            if s > bestv:
                bestv = s
                best = y
        a[q] = best
        b[q] = best

    for k in range(max_iters):
        for q in range(Q):
            n = sizes[q]
            cA[q, a[q]] += 1.0
            cB[q, b[q]] += 1.0
            for y in range(n):
                hA[q, y] += H[q, b[q], y]
                hB[q, y] += H[q, a[q], y]
                pA[q, y] += P[q, b[q], y]
                pB[q, y] += P[q, a[q], y]
        t = k + 1.0
        exA = 0.0
        exB = 0.0
        vA = 0.0
        vB = 0.0
        for q in range(Q):
            n = sizes[q]
            brA = -1e300
            brB = -1e300
            curA = 0.0
            curB = 0.0
            s = 0.0
            sB = 0.0
            for y in range(n):
                if pA[q, y] > brA:
                    brA = pA[q, y]
                if pB[q, y] > brB:
                    brB = pB[q, y]
                curA += cA[q, y] * pA[q, y]
                curB += cB[q, y] * pB[q, y]
                s += cA[q, y] * hA[q, y]
                sB += cB[q, y] * hB[q, y]
            exA += qprobs[q] * (brA / t - curA / (t * t))
            exB += qprobs[q] * (brB / t - curB / (t * t))
            vA += qprobs[q] * s / (t * t)
            vB += qprobs[q] * sB / (t * t)
        ex[k] = exA if exA > exB else exB
        pay_a[k] = vA
        pay_b[k] = vB
        recorded = k + 1
        if ex[k] <= tol:
            break
        for q in range(Q):
            n = sizes[q]
            best = 0
            bestv = hA[q, 0]
            for y in range(1, n):
                if hA[q, y] > bestv:
                    bestv = hA[q, y]
                    best = y
            a[q] = best
            best = 0
            bestv = hB[q, 0]
            for y in range(1, n):
                if hB[q, y] > bestv:
                    bestv = hB[q, y]
                    best = y
            b[q] = best
    return cA_arr, cB_arr, ex_arr[:recorded].copy(), pa_arr[:recorded].copy(), pb_arr[:recorded].copy()
