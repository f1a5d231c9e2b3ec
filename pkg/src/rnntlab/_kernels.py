"""Hot inner loops: transducer lattice recursions and Levenshtein distance.

Each kernel exists twice: a numba ``@njit`` loop and a pure-numpy version
(anti-diagonal sweeps for the lattice, a prefix-minimum trick for the edit
distance). ``alpha_beta`` and ``edit_distance`` dispatch on
``rnntlab._accel.USE_NUMBA``; both variants are importable for tests and the
benchmark.
"""
import numpy as np

from . import _accel
from ._accel import njit

NEG_INF = -np.inf


# ---------------------------------------------------------------- lattice


@njit
def _logadd(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit
def alpha_beta_numba(blank_lp, emit_lp):
    T = blank_lp.shape[0]
    U = blank_lp.shape[1] - 1
    alpha = np.full((T + 1, U + 1), NEG_INF)
    beta = np.full((T + 1, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            a = NEG_INF
            if t > 0:
                a = alpha[t - 1, u] + blank_lp[t - 1, u]
            if u > 0:
                a = _logadd(a, alpha[t, u - 1] + emit_lp[t, u - 1])
            alpha[t, u] = a
    alpha[T, U] = alpha[T - 1, U] + blank_lp[T - 1, U]
    beta[T, U] = 0.0
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            b = beta[t + 1, u] + blank_lp[t, u]
            if u < U:
                b = _logadd(b, beta[t, u + 1] + emit_lp[t, u])
            beta[t, u] = b
    return alpha, beta


def _np_logadd(a, b):
    m = np.maximum(a, b)
    out = np.full_like(m, NEG_INF)
    ok = m > NEG_INF
    out[ok] = m[ok] + np.log(np.exp(a[ok] - m[ok]) + np.exp(b[ok] - m[ok]))
    return out


def alpha_beta_numpy(blank_lp, emit_lp):
    """Anti-diagonal sweep: every cell on diagonal t+u=n depends only on diagonal n-1."""
    T = blank_lp.shape[0]
    U = blank_lp.shape[1] - 1
    # one row/column of -inf padding on the low side for alpha, high side for beta
    A = np.full((T + 1, U + 2), NEG_INF)
    A[1, 1] = 0.0
    blank_pad = np.full((T + 1, U + 1), NEG_INF)
    blank_pad[1:, :] = blank_lp
    emit_pad = np.full((T, U + 1), NEG_INF)
    emit_pad[:, 1:] = emit_lp
    for n in range(1, T + U):
        t = np.arange(max(0, n - U), min(T - 1, n) + 1)
        u = n - t
        from_blank = A[t, u + 1] + blank_pad[t, u]          # alpha(t-1,u) + blank(t-1,u)
        from_emit = A[t + 1, u] + emit_pad[t, u]            # alpha(t,u-1) + emit(t,u-1)
        A[t + 1, u + 1] = _np_logadd(from_blank, from_emit)
    alpha = np.full((T + 1, U + 1), NEG_INF)
    alpha[:T] = A[1:, 1:]
    alpha[T, U] = alpha[T - 1, U] + blank_lp[T - 1, U]

    B = np.full((T + 1, U + 2), NEG_INF)
    B[T, U] = 0.0
    emit_hi = np.full((T, U + 1), NEG_INF)
    emit_hi[:, :U] = emit_lp
    for n in range(T - 1 + U, -1, -1):
        t = np.arange(max(0, n - U), min(T - 1, n) + 1)
        u = n - t
        B[t, u] = _np_logadd(B[t + 1, u] + blank_lp[t, u], B[t, u + 1] + emit_hi[t, u])
    beta = B[:, :U + 1].copy()
    return alpha, beta


def alpha_beta(blank_lp, emit_lp):
    """Forward and backward log-variables, shapes ``(T+1, U+1)`` each.

    ``blank_lp[t, u]`` = log Pr(blank | t, u) for ``t < T``, ``u <= U``;
    ``emit_lp[t, u]`` = log Pr(y_{u+1} | t, u) for ``u < U``.
    Row ``T`` of alpha holds only the terminal ``alpha[T, U]`` (= log-likelihood);
    row ``T`` of beta holds the boundary ``beta[T, U] = 0``.
    """
    blank_lp = np.ascontiguousarray(blank_lp, dtype=np.float64)
    emit_lp = np.ascontiguousarray(emit_lp, dtype=np.float64).reshape(blank_lp.shape[0], -1)
    if _accel.USE_NUMBA:
        return alpha_beta_numba(blank_lp, emit_lp)
    return alpha_beta_numpy(blank_lp, emit_lp)


# ---------------------------------------------------------------- edit distance


@njit
def edit_distance_numba(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def edit_distance_numpy(ref, hyp):
    """Row DP; the in-row insertion chain is a running minimum of ``c[k] - k``."""
    ref = np.asarray(ref)
    hyp = np.asarray(hyp)
    m = hyp.shape[0]
    cols = np.arange(m + 1)
    prev = cols.copy()
    for i in range(1, ref.shape[0] + 1):
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[:-1] + (hyp != ref[i - 1]), prev[1:] + 1)
        prev = np.minimum.accumulate(cand - cols) + cols
    return int(prev[m])


def edit_distance(ref, hyp) -> int:
    """Unit-cost Levenshtein distance between two integer sequences."""
    r = np.asarray(ref, dtype=np.int64).reshape(-1)
    h = np.asarray(hyp, dtype=np.int64).reshape(-1)
    if _accel.USE_NUMBA:
        return int(edit_distance_numba(r, h))
    return edit_distance_numpy(r, h)
