"""Compiled inner loops for the filter and the backward sampler.

All routines are written against small dense matrices (n, r <= ~10) with
explicit loops; they never raise and report failures through return codes.
"""
import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
JITTER = 1e-10

OK = 0
Q_NOT_PD = 1
P_NOT_PD = 2


@njit(cache=True, nogil=True)
def chol_inplace(A, L, k):
    """Lower Cholesky of the leading k x k block of A into L. False if not PD."""
    for i in range(k):
        for j in range(k):
            L[i, j] = 0.0
    for j in range(k):
        s = A[j, j]
        for l in range(j):
            s -= L[j, l] * L[j, l]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, k):
            s = A[i, j]
            for l in range(j):
                s -= L[i, l] * L[j, l]
            L[i, j] = s / d
    return True


@njit(cache=True, nogil=True)
def chol_jitter(A, L, k):
    """Cholesky with a single 1e-10 diagonal retry."""
    if chol_inplace(A, L, k):
        return True
    for i in range(k):
        A[i, i] += JITTER
    return chol_inplace(A, L, k)


@njit(cache=True, nogil=True)
def forward_solve(L, b, k):
    """Solve L x = b in place for a k-vector b."""
    for i in range(k):
        s = b[i]
        for l in range(i):
            s -= L[i, l] * b[l]
        b[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def backward_solve(L, b, k):
    """Solve L^T x = b in place."""
    for i in range(k - 1, -1, -1):
        s = b[i]
        for l in range(i + 1, k):
            s -= L[l, i] * b[l]
        b[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def filter_kernel(
    y, obs, Fp, G, m0, C0, W, alpha0, alpha, beta, R, s2_init,
    a_out, P_out, m_out, C_out, S2_out, f_out, Q_out, e_out, K_out, lp_out, ez2,
):
    T, n = y.shape
    r = G.shape[0]
    p = alpha.shape[1]
    q = beta.shape[1]

    GC = np.empty((r, r))
    FP = np.empty((n, r))
    Qo = np.empty((n, n))
    L = np.empty((n, n))
    X = np.empty((n, r))  # L^{-1} (P F_o)^T
    eo = np.empty(n)
    col = np.empty(n)
    sd = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    Fm = np.empty(n)

    for j in range(r):
        m_out[0, j] = m0[j]
        for l in range(r):
            C_out[0, j, l] = C0[j, l]

    for t in range(T):
        m_prev = m_out[t]
        C_prev = C_out[t]
        a = a_out[t]
        P = P_out[t]
        # prediction
        for i in range(r):
            s = 0.0
            for j in range(r):
                s += G[i, j] * m_prev[j]
            a[i] = s
        for i in range(r):
            for j in range(r):
                s = 0.0
                for l in range(r):
                    s += G[i, l] * C_prev[l, j]
                GC[i, j] = s
        # upper triangle only, mirrored
        for i in range(r):
            for j in range(i, r):
                s = 0.0
                for l in range(r):
                    s += GC[i, l] * G[j, l]
                v = s + 0.5 * (W[i, j] + W[j, i])
                P[i, j] = v
                P[j, i] = v
        # conditional variance recursion with expected squared errors
        for i in range(n):
            s2 = alpha0[i]
            for j in range(p):
                tt = t - 1 - j
                s2 += alpha[i, j] * (ez2[tt, i] if tt >= 0 else s2_init[i])
            for j in range(q):
                tt = t - 1 - j
                s2 += beta[i, j] * (S2_out[tt, i] if tt >= 0 else s2_init[i])
            S2_out[t, i] = s2
            sd[i] = math.sqrt(s2)
        # one-step forecast
        f = f_out[t]
        Q = Q_out[t]
        for i in range(n):
            s = 0.0
            for j in range(r):
                s += Fp[i, j] * a[j]
            f[i] = s
            for j in range(r):
                s = 0.0
                for l in range(r):
                    s += Fp[i, l] * P[l, j]
                FP[i, j] = s
        for i in range(n):
            for j in range(i, n):
                s = 0.0
                for l in range(r):
                    s += FP[i, l] * Fp[j, l]
                v = s + sd[i] * sd[j] * 0.5 * (R[i, j] + R[j, i])
                Q[i, j] = v
                Q[j, i] = v

        k = 0
        for i in range(n):
            if obs[t, i]:
                idx[k] = i
                k += 1
        m = m_out[t + 1]
        C = C_out[t + 1]
        K = K_out[t]
        for i in range(r):
            for j in range(n):
                K[i, j] = 0.0
        for i in range(n):
            e_out[t, i] = y[t, i] - f[i] if obs[t, i] else np.nan

        if k == 0:
            for i in range(r):
                m[i] = a[i]
                for j in range(r):
                    C[i, j] = P[i, j]
            lp_out[t] = 0.0
        else:
            for u in range(k):
                for v in range(k):
                    Qo[u, v] = Q[idx[u], idx[v]]
            if not chol_jitter(Qo, L, k):
                return Q_NOT_PD, t
            for u in range(k):
                eo[u] = y[t, idx[u]] - f[idx[u]]
            forward_solve(L, eo, k)
            quad = 0.0
            logdet = 0.0
            for u in range(k):
                quad += eo[u] * eo[u]
                logdet += math.log(L[u, u])
            lp_out[t] = -0.5 * (k * LOG_2PI + quad) - logdet
            # X = L^{-1} (F_o P), one state column at a time
            for j in range(r):
                for u in range(k):
                    col[u] = FP[idx[u], j]
                forward_solve(L, col, k)
                for u in range(k):
                    X[u, j] = col[u]
            for i in range(r):
                s = a[i]
                for u in range(k):
                    s += X[u, i] * eo[u]
                m[i] = s
            for i in range(r):
                for j in range(i, r):
                    s = P[i, j]
                    for u in range(k):
                        s -= X[u, i] * X[u, j]
                    C[i, j] = s
                    C[j, i] = s
            # gain K_o = X^T L^{-T}
            for i in range(r):
                for u in range(k):
                    col[u] = X[u, i]
                backward_solve(L, col, k)
                for u in range(k):
                    K[i, idx[u]] = col[u]

        # expected squared error E[z_{i,t}^2 | y_{1:t}] feeding the next variance step
        for i in range(n):
            if obs[t, i]:
                s = 0.0
                for j in range(r):
                    s += Fp[i, j] * m[j]
                Fm[i] = s
                s = 0.0
                for j in range(r):
                    if Fp[i, j] != 0.0:
                        for l in range(r):
                            s += Fp[i, j] * C[j, l] * Fp[i, l]
                d = y[t, i] - Fm[i]
                ez2[t, i] = d * d + s
            else:
                ez2[t, i] = Q[i, i]
    return OK, -1


@njit(cache=True, nogil=True)
def psd_factor(A, out):
    """Symmetric square-root factor of a PSD matrix via eigh, clipping negatives."""
    w, v = np.linalg.eigh(0.5 * (A + A.T))
    k = A.shape[0]
    for j in range(k):
        s = math.sqrt(w[j]) if w[j] > 0.0 else 0.0
        for i in range(k):
            out[i, j] = v[i, j] * s


@njit(cache=True, nogil=True)
def ffbs_kernel(G, a, P, m, C, eps, out):
    """Backward sampling. ``eps`` is (S, T+1, r) standard normal; ``out`` same shape.

    ``a``/``P`` are the predicted moments for t = 1..T (index 0..T-1) and
    ``m``/``C`` the filtered ones for t = 0..T.
    """
    S = eps.shape[0]
    T = a.shape[0]
    r = G.shape[0]
    Lf = np.empty((r, r))
    J = np.empty((T, r, r))  # C_t G^T P_{t+1}^{-1}
    Hf = np.empty((T + 1, r, r))
    Lp = np.empty((r, r))
    Pc = np.empty((r, r))
    CGt = np.empty((r, r))
    tmp = np.empty(r)
    H = np.empty((r, r))

    psd_factor(C[T], Hf[T])
    for t in range(T - 1, -1, -1):
        for i in range(r):
            for j in range(r):
                Pc[i, j] = P[t, i, j]
        if not chol_jitter(Pc, Lp, r):
            return P_NOT_PD, t
        for i in range(r):
            for j in range(r):
                s = 0.0
                for l in range(r):
                    s += C[t, i, l] * G[j, l]
                CGt[i, j] = s
        # J = CGt P^{-1}: solve P J^T = CGt^T row by row
        for i in range(r):
            for j in range(r):
                tmp[j] = CGt[i, j]
            forward_solve(Lp, tmp, r)
            backward_solve(Lp, tmp, r)
            for j in range(r):
                J[t, i, j] = tmp[j]
        # H = C - J G C
        for i in range(r):
            for j in range(r):
                s = C[t, i, j]
                for l in range(r):
                    s -= J[t, i, l] * CGt[j, l]
                H[i, j] = s
        psd_factor(H, Hf[t])

    for s_ in range(S):
        th = out[s_]
        for i in range(r):
            v = m[T, i]
            for j in range(r):
                v += Hf[T, i, j] * eps[s_, T, j]
            th[T, i] = v
        for t in range(T - 1, -1, -1):
            for j in range(r):
                tmp[j] = th[t + 1, j] - a[t, j]
            for i in range(r):
                v = m[t, i]
                for j in range(r):
                    v += J[t, i, j] * tmp[j] + Hf[t, i, j] * eps[s_, t, j]
                th[t, i] = v
    return OK, -1
