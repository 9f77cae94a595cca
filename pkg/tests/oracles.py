"""Reference computations used by the tests.

Written with plain Python loops and ``math`` so they share no code with the
vectorised implementations they check.
"""

import itertools
import math

import numpy as np


def rel_err(a, b):
    a, b = float(a), float(b)
    den = max(abs(a), abs(b))
    return 0.0 if den == 0 else abs(a - b) / den


def hetero(counts, pi_h):
    top = max(counts)
    if top == 0:
        return [1.0 for _ in counts]
    return [math.exp(-c / top * pi_h) for c in counts]


def semantic(rows, pi_s):
    out = []
    for row in rows:
        top = max(row)
        out.append([0.0 for _ in row] if top == 0 else [-math.expm1(-c / top * pi_s) for c in row])
    return out


def ema(theta_s, theta_w, alpha, rate, draw):
    if not rate > draw:
        return list(theta_s)
    return [alpha * s + (1 - alpha) * w for s, w in zip(theta_s, theta_w)]


def log_softmax_row(row):
    top = max(range(len(row)), key=lambda j: row[j])
    tail = math.log1p(math.fsum(math.exp(v - row[top]) for j, v in enumerate(row) if j != top))
    return [(v - row[top]) - tail for v in row]


def total_loss(logits, labels, mem_logits, targets, gamma):
    ce = -math.fsum(log_softmax_row(list(r))[y] for r, y in zip(logits, labels)) / len(labels)
    if mem_logits is None or gamma == 0:
        return ce
    diffs = [(a - b) ** 2 for ra, rb in zip(mem_logits, targets) for a, b in zip(ra, rb)]
    return ce + gamma * sum(diffs) / len(diffs)


def best_k_subset(scores, k):
    """Lexicographically first index set of size k with maximal score sum."""
    best, best_set = -math.inf, None
    for combo in itertools.combinations(range(len(scores)), k):
        s = sum(scores[i] for i in combo)
        if s > best:
            best, best_set = s, combo
    return best, set(best_set)


def successive_inclusion(p, n_draw):
    """Exact per-unit inclusion probabilities for sequential weighted draws without
    replacement, enumerating every ordered outcome."""
    live = [i for i, v in enumerate(p) if v > 0]
    incl = [0.0] * len(p)
    for seq in itertools.permutations(live, min(n_draw, len(live))):
        prob, left = 1.0, sum(p[i] for i in live)
        for i in seq:
            prob *= p[i] / left
            left -= p[i]
        for i in seq:
            incl[i] += prob
    return incl


def numeric_grad(f, arr, step=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = f()
        flat[j] = orig - step
        down = f()
        flat[j] = orig
        out[j] = (up - down) / (2 * step)
    return out.reshape(arr.shape)


def conv2d_naive(x, w, b, pad):
    """Direct 6-loop cross-correlation on NCHW input."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, f, oh, ow))
    for i in range(n):
        for o in range(f):
            for r in range(oh):
                for s in range(ow):
                    acc = b[o]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, ch, u, v] * xp[i, ch, r + u, s + v]
                    out[i, o, r, s] = acc
    return out


def spearman(a, b):
    """Spearman rank correlation with average ranks for ties."""
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for t in range(i, j + 1):
                r[order[t]] = (i + j) / 2 + 1
            i = j + 1
        return r
    ra, rb = ranks(a), ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = math.sqrt(sum((x - ma) ** 2 for x in ra))
    vb = math.sqrt(sum((y - mb) ** 2 for y in rb))
    return cov / (va * vb)
