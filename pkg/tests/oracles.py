"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (path enumeration, full DP tables,
exhaustive search) and shares no code with the package.
"""
import itertools
import math

import numpy as np


def random_lattice(rng, T, U, V_total, scale=1.5):
    """Normalized log-probabilities [T, U+1, V_total]."""
    z = rng.normal(0.0, scale, (T, U + 1, V_total))
    z -= z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def random_targets(rng, U, V_total):
    return [int(k) for k in rng.integers(1, V_total, size=U)]


def monotone_paths(T, U):
    """Every lattice path as the list of frames (0-based) at which each target is emitted."""
    for frames in itertools.combinations_with_replacement(range(T), U):
        yield frames


def brute_force_log_like(log_probs, targets):
    """log sum over all alignments of the product of transition probabilities.

    A path emits target ``u`` at frame ``f_u`` (nondecreasing) and takes a
    blank at every frame after its emissions there, ending with the blank at
    frame T-1.
    """
    T = log_probs.shape[0]
    U = len(targets)
    total = 0.0
    for frames in monotone_paths(T, U):
        lp = 0.0
        u = 0
        for t in range(T):
            while u < U and frames[u] == t:
                lp += log_probs[t, u, targets[u]]
                u += 1
            lp += log_probs[t, u, 0]
        total += math.exp(lp)
    return math.log(total)


def levenshtein(a, b):
    """Full DP table, no tricks."""
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[n][m]


def direct_attention(q, k, v, mask):
    """Single-head softmax(q k^T / sqrt(d)) v with a boolean mask, row by row."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        s = np.array([q[i] @ k[j] / math.sqrt(q.shape[1]) if mask[i, j] else -np.inf
                      for j in range(k.shape[0])])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = w @ v
    return out


class TableModel:
    """Decoder model whose joint output is a fixed random table indexed by (frame, prefix).

    Encoder "frames" are ``np.array([t])`` so the table can look the frame up.
    """

    def __init__(self, vocab, seed, T, scale=2.0):
        self.vocab = vocab
        self.seed = seed
        self.T = T
        self.scale = scale
        self._cache = {}

    def frames(self):
        return [np.array([float(t)]) for t in range(self.T)]

    def initial_pred_state(self):
        return ()

    def predict(self, state, token):
        return state + (token,)

    def table(self, t, prefix):
        key = (t, tuple(prefix))
        lp = self._cache.get(key)
        if lp is None:
            rng = np.random.default_rng([self.seed, t, len(prefix), *prefix])
            z = rng.normal(0.0, self.scale, self.vocab.total)
            z -= z.max()
            lp = z - np.log(np.exp(z).sum())
            self._cache[key] = lp
        return lp

    def joint_log_probs(self, h, state):
        return self.table(int(h[0]), state)

    def lattice(self, labels):
        """Normalized lattice for a label sequence under this model."""
        return np.stack([np.stack([self.table(t, labels[:u]) for u in range(len(labels) + 1)])
                         for t in range(self.T)])


def capped_log_like(lat, labels, cap):
    """Marginal over alignments with at most ``cap`` emissions per frame, frame by frame."""
    T, U = lat.shape[0], len(labels)
    cur = np.full(U + 1, -np.inf)
    cur[0] = 0.0
    for t in range(T):
        nxt = np.full(U + 1, -np.inf)
        for u in range(U + 1):
            if cur[u] == -np.inf:
                continue
            run = cur[u]
            for v in range(u, min(U, u + cap) + 1):
                if v > u:
                    run += lat[t, v - 1, labels[v - 1]]
                nxt[v] = np.logaddexp(nxt[v], run + lat[t, v, 0])
        cur = nxt
    return cur[U]


def exhaustive_best_sequence(model, max_per_frame):
    """Best label sequence (EOQ only terminal) by marginal likelihood over every alignment
    with at most ``max_per_frame`` emissions per frame; sequences up to T * max_per_frame long.

    Branch and bound: the uncapped probability of all sequences extending a prefix
    bounds every extension's score, so prefixes that cannot beat the incumbent are cut.
    """
    max_len = model.T * max_per_frame
    V = model.vocab
    tokens = [k for k in range(1, V.total)]
    best = (-math.inf, ())

    def alpha_row(labels):
        lat = model.lattice(labels)
        T, U = lat.shape[0], len(labels)
        a = np.full((T, U + 1), -np.inf)
        a[0, 0] = 0.0
        for t in range(T):
            for u in range(U + 1):
                if t == 0 and u == 0:
                    continue
                c = []
                if t > 0:
                    c.append(a[t - 1, u] + lat[t - 1, u, 0])
                if u > 0:
                    c.append(a[t, u - 1] + lat[t, u - 1, labels[u - 1]])
                a[t, u] = np.logaddexp.reduce(c)
        return lat, a

    def visit(labels):
        nonlocal best
        lat, a = alpha_row(labels)
        U = len(labels)
        ll = capped_log_like(lat, labels, max_per_frame)
        key = (ll, tuple(labels))
        if ll > best[0] + 1e-12 or (abs(ll - best[0]) <= 1e-12 and tuple(labels) < best[1]):
            best = key
        if len(labels) == max_len or (labels and labels[-1] == V.eoq_id):
            return
        # probability mass of every sequence extending ``labels`` by at least one token
        ext = np.logaddexp.reduce(a[:, U] + np.log1p(-np.exp(lat[:, U, 0])))
        if ext < best[0]:
            return
        order = sorted(tokens, key=lambda k: -np.logaddexp.reduce(a[:, U] + lat[:, U, k]))
        for k in order:
            visit(labels + [k])

    visit([])
    return best
