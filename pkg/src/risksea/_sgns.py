"""Numba kernels for skip-gram with negative sampling.

Walks arrive as one flat int64 array of vocabulary indices plus offsets.  Each
walk gets its own 64-bit LCG stream seeded from ``(seed, epoch, walk)`` and its
learning rate is a pure function of its position in the epoch, so the sequential
and the parallel kernels run the same arithmetic; only the update order differs.
Nodes with ``trainable == 0`` are read but never written.
"""

import numba as nb
import numpy as np

_LCG_A = np.uint64(6364136223846793005)
_LCG_C = np.uint64(1442695040888963407)


@nb.njit(cache=True, inline="always")
def _splitmix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _walk_seed(seed, epoch, walk):
    s = _splitmix(np.uint64(seed))
    s = _splitmix(s ^ np.uint64(epoch))
    return _splitmix(s ^ np.uint64(walk))


@nb.njit(cache=True, inline="always")
def _lcg(state):
    return state * _LCG_A + _LCG_C


@nb.njit(cache=True, inline="always")
def _unit(state):
    # top 53 bits -> [0, 1)
    return float(state >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def build_alias(weights):
    """Walker/Vose alias table ``(prob, alias)`` for sampling proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n == 0 or not np.all(w >= 0) or w.sum() <= 0:
        raise ValueError("alias table needs non-negative weights with a positive sum")
    return _vose(w * (n / w.sum()))


@nb.njit(cache=True)
def _vose(scaled):
    n = scaled.shape[0]
    prob = np.ones(n)
    alias = np.arange(n)
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        g = large[nl - 1]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        if scaled[g] < 1.0:
            nl -= 1
            small[ns] = g
            ns += 1
    # leftovers are 1 up to rounding
    return prob, alias


@nb.njit(cache=True, inline="always")
def _alias_draw(prob, alias, u):
    x = u * prob.shape[0]
    i = int(x)
    if i >= prob.shape[0]:
        i = prob.shape[0] - 1
    return i if x - i < prob[i] else alias[i]


@nb.njit(cache=True)
def draw_negatives(prob, alias, n, seed):
    """``n`` draws from an alias table, using the trainer's RNG stream (used for testing)."""
    out = np.empty(n, dtype=np.int64)
    state = _splitmix(np.uint64(seed))
    for i in range(n):
        state = _lcg(state)
        out[i] = _alias_draw(prob, alias, _unit(state))
    return out


@nb.njit(cache=True, fastmath=True, inline="always")
def sgd_pair(w_in, w_out, center, context, negs, alpha, trainable, neu1e):
    """One SGD step on ``-log s(u.v) - sum log s(-u.v')`` for a single pair.

    ``negs`` entries < 0 are skipped.  Output vectors are updated with the
    pre-step input vector, then the input vector is updated.
    """
    d = w_in.shape[1]
    for k in range(d):
        neu1e[k] = 0.0
    for j in range(negs.shape[0] + 1):
        if j == 0:
            target = context
            label = 1.0
        else:
            target = negs[j - 1]
            if target < 0:
                continue
            label = 0.0
        f = 0.0
        for k in range(d):
            f += w_in[center, k] * w_out[target, k]
        g = (label - 1.0 / (1.0 + np.exp(-f))) * alpha
        for k in range(d):
            neu1e[k] += g * w_out[target, k]
        if trainable[target]:
            for k in range(d):
                w_out[target, k] += g * w_in[center, k]
    if trainable[center]:
        for k in range(d):
            w_in[center, k] += neu1e[k]


@nb.njit(cache=True, fastmath=True)
def _train_walk(w_in, w_out, flat, start, end, prob, alias, trainable, window, negative, alpha, state, neu1e,
                negs):
    for i in range(start, end):
        state = _lcg(state)
        reach = window - int(_unit(state) * window)
        lo = max(start, i - reach)
        hi = min(end, i + reach + 1)
        center = flat[i]
        for j in range(lo, hi):
            if j == i:
                continue
            context = flat[j]
            for m in range(negative):
                state = _lcg(state)
                k = _alias_draw(prob, alias, _unit(state))
                negs[m] = -1 if k == context else k
            sgd_pair(w_in, w_out, center, context, negs, alpha, trainable, neu1e)
    return state


@nb.njit(cache=True, inline="always")
def _alpha(lr0, lr_min, epoch, pos, n_tokens, epochs):
    a = lr0 - (lr0 - lr_min) * (epoch * n_tokens + pos) / (epochs * n_tokens)
    return max(a, lr_min)


@nb.njit(cache=True)
def train_sequential(w_in, w_out, flat, offsets, prob, alias, trainable, window, negative,
                     lr0, lr_min, epochs, seed):
    d = w_in.shape[1]
    neu1e = np.zeros(d, dtype=w_in.dtype)
    negs = np.empty(negative, dtype=np.int64)
    n_tokens = flat.shape[0]
    for ep in range(epochs):
        for w in range(offsets.shape[0] - 1):
            start, end = offsets[w], offsets[w + 1]
            alpha = _alpha(lr0, lr_min, ep, start, n_tokens, epochs)
            _train_walk(w_in, w_out, flat, start, end, prob, alias, trainable, window, negative,
                        alpha, _walk_seed(seed, ep, w), neu1e, negs)


@nb.njit(cache=True, parallel=True)
def train_parallel(w_in, w_out, flat, offsets, prob, alias, trainable, window, negative,
                   lr0, lr_min, epochs, seed):
    # unsynchronized updates across walks (hogwild); frozen rows are never written
    d = w_in.shape[1]
    n_tokens = flat.shape[0]
    n_walks = offsets.shape[0] - 1
    for ep in range(epochs):
        for w in nb.prange(n_walks):
            neu1e = np.zeros(d, dtype=w_in.dtype)
            negs = np.empty(negative, dtype=np.int64)
            start, end = offsets[w], offsets[w + 1]
            alpha = _alpha(lr0, lr_min, ep, start, n_tokens, epochs)
            _train_walk(w_in, w_out, flat, start, end, prob, alias, trainable, window, negative,
                        alpha, _walk_seed(seed, ep, w), neu1e, negs)
