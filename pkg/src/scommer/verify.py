"""Fast invariant suite behind ``scommer verify``.

Each check compares a production function against an independent oracle
(scalar ``math`` loops, exhaustive enumeration, finite differences or exact
sampling distributions). Implementations are looked up in a table so tests can
inject a mutated version and confirm the matching check fails by name.
"""

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import dropout, memory, sparse, trainer
from .tensor_net import KWTA, Conv2d, Flatten, Linear, MaxPool2d, Network, ReLU, cross_entropy

REL_TOL = 1e-12
GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-6  # gradients below this are compared on an absolute scale


def default_impl():
    return {
        "update_hetero": dropout.update_hetero,
        "update_semantic": dropout.update_semantic,
        "ema_update": memory.ema_update,
        "compute_loss": trainer.compute_loss,
        "apply_kwta": sparse.apply_kwta,
        "hetero_masks": dropout.hetero_masks,
        "EpisodicMemory": memory.EpisodicMemory,
    }


@dataclass
class Outcome:
    ident: str
    ok: bool
    message: str
    seconds: float


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.abs(a), np.abs(b))
    return np.where(den > 0, np.abs(a - b) / np.where(den > 0, den, 1.0), 0.0)


# scalar oracles

def hetero_oracle(counts, pi_h):
    top = max(counts)
    if top <= 0:
        return [1.0] * len(counts)
    return [math.exp(-(c / top) * pi_h) for c in counts]


def semantic_oracle(rows, pi_s):
    out = []
    for row in rows:
        top = max(row)
        out.append([0.0] * len(row) if top <= 0 else [-math.expm1(-(c / top) * pi_s) for c in row])
    return out


def loss_oracle(logits, labels, mem_logits, targets, gamma):
    ce = 0.0
    for row, y in zip(logits, labels):
        top = max(range(len(row)), key=lambda j: row[j])
        rest = math.fsum(math.exp(v - row[top]) for j, v in enumerate(row) if j != top)
        ce += math.log1p(rest) + (row[top] - row[y])
    ce /= len(labels)
    if mem_logits is None or gamma == 0:
        return ce
    sq = [(a - b) ** 2 for ra, rb in zip(mem_logits, targets) for a, b in zip(ra, rb)]
    return ce + gamma * sum(sq) / len(sq)


def successive_inclusion(p, n_draw):
    """Exact inclusion probabilities of sampling ``n_draw`` units one at a time
    without replacement, each draw proportional to ``p`` among the remaining."""
    incl = [0.0] * len(p)
    live = [i for i in range(len(p)) if p[i] > 0]
    for seq in itertools.permutations(live, min(n_draw, len(live))):
        prob, left = 1.0, sum(p[i] for i in live)
        for i in seq:
            prob *= p[i] / left
            left -= p[i]
        for i in seq:
            incl[i] += prob
    return incl


# checks

def check_hetero_formula(impl, rng):
    f = impl["update_hetero"]
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        counts = rng.integers(0, 1000, n)
        pi = float(rng.uniform(0, 5))
        got, want = f(counts, pi), hetero_oracle(counts.tolist(), pi)
        err = _rel(got, want).max()
        assert err <= REL_TOL, f"counts={counts.tolist()} pi_h={pi}: rel err {err:.3g}"
    assert np.array_equal(f(np.zeros(7, dtype=np.int64), 0.5), np.ones(7)), "zero counts must give all ones"


def check_semantic_formula(impl, rng):
    f = impl["update_semantic"]
    for _ in range(1000):
        c, n = int(rng.integers(1, 6)), int(rng.integers(1, 30))
        counts = rng.integers(0, 500, (c, n))
        counts[rng.random(c) < 0.2] = 0
        pi = float(rng.uniform(0, 5))
        got, want = f(counts, pi), semantic_oracle(counts.tolist(), pi)
        err = _rel(got, want).max()
        assert err <= REL_TOL, f"counts={counts.tolist()} pi_s={pi}: rel err {err:.3g}"
    assert np.array_equal(f(np.zeros((3, 5), dtype=np.int64), 2.0), np.zeros((3, 5))), "empty rows must stay zero"


def _tiny_net(rng):
    return Network([Flatten(), Linear(4, 3, rng=rng)], (4,), 3)


def check_ema_formula(impl, rng):
    f = impl["ema_update"]
    for _ in range(1000):
        w, s = _tiny_net(rng), _tiny_net(rng)
        alpha, rate = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        before = {k: v.copy() for k, v in s.named_params().items()}
        seed = int(rng.integers(2 ** 31))
        fired = f(s, w, memory.ConsolidationConfig(alpha=alpha, rate=rate), np.random.default_rng(seed))
        expect_fire = rate > np.random.default_rng(seed).random()
        assert fired == expect_fire, f"rate={rate}: fired={fired}, expected {expect_fire}"
        for k, p in s.named_params().items():
            want = [alpha * a + (1 - alpha) * b if expect_fire else a
                    for a, b in zip(before[k].ravel().tolist(), w.named_params()[k].ravel().tolist())]
            err = _rel(p.ravel(), want).max()
            assert err <= REL_TOL, f"alpha={alpha} rate={rate} {k}: rel err {err:.3g}"
    for rate, expect in ((0.0, False), (1.0, True)):
        w, s = _tiny_net(rng), _tiny_net(rng)
        before = {k: v.copy() for k, v in s.named_params().items()}
        results = {f(s, w, memory.ConsolidationConfig(alpha=0.9, rate=rate), rng) for _ in range(200)}
        assert results == {expect}, f"rate={rate} must {'always' if expect else 'never'} fire"
        if not expect:
            assert all(np.array_equal(before[k], v) for k, v in s.named_params().items()), "rate=0 moved theta_s"


def check_loss_formula(impl, rng):
    f = impl["compute_loss"]
    for i in range(1000):
        b, m, c = int(rng.integers(1, 6)), int(rng.integers(0, 4)), int(rng.integers(2, 8))
        logits = rng.normal(0, 3, (b + m, c))
        labels = rng.integers(0, c, b + m)
        mem = logits[b:] + rng.normal(0, 1, (m, c)) if m else None
        z = rng.normal(0, 3, (m, c)) if m else None
        gamma = 0.0 if i % 10 == 0 else float(rng.uniform(0, 2))
        got = f(logits, labels, mem, z, gamma)[0]
        want = loss_oracle(logits.tolist(), labels.tolist(), None if mem is None else mem.tolist(),
                           None if z is None else z.tolist(), gamma)
        err = _rel(got, want)
        assert err <= REL_TOL, f"gamma={gamma}: loss {got!r} vs oracle {want!r}"
    logits = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, 4)
    plain = f(logits, labels)[0]
    assert f(logits, labels, logits[2:], rng.normal(size=(2, 5)), 0.0)[0] == plain, "gamma=0 must equal plain CE"


def check_kwta_sparsity(impl, rng):
    f = impl["apply_kwta"]
    for _ in range(1000):
        c = int(rng.integers(4, 65))
        ratio = float(rng.choice([0.25, 0.5, 0.8, 0.9, 1.0]))
        act = rng.normal(size=(c, 3, 3))
        pre = None
        if rng.random() < 0.3:
            pre = (rng.random(c) < rng.uniform(0.1, 1.0)).astype(np.float64)
        out = f(act, ratio, pre)
        k = max(1, math.floor(ratio * c + 0.5))
        want = k if pre is None else min(k, int(pre.sum()))
        # a winner whose map is all nonpositive is zeroed by the ReLU, so count selections
        sel = sparse.selection_mask(act, ratio, pre)
        got = int(sel.sum())
        assert got == want, f"C={c} ratio={ratio}: {got} filters selected, expected {want}"
        alive = np.abs(out).sum(axis=(1, 2)) > 0
        assert not np.any(alive & (sel == 0)), f"C={c} ratio={ratio}: unselected filter passed through"


def check_kwta_topk(impl, rng):
    f = impl["apply_kwta"]
    for _ in range(300):
        c = int(rng.integers(2, 9))
        ratio = float(rng.choice([0.25, 0.5, 0.8, 1.0]))
        act = np.abs(rng.normal(size=(c, 2, 2))) + 1e-3
        out = f(act, ratio)
        k = max(1, math.floor(ratio * c + 0.5))
        scores = act.sum(axis=(1, 2))
        best = max(sum(scores[list(s)]) for s in itertools.combinations(range(c), k))
        kept = np.abs(out).sum(axis=(1, 2)) > 0
        got = scores[kept].sum()
        assert kept.sum() == k and abs(got - best) <= 1e-12 * best, f"C={c} k={k}: kept {kept.astype(int)}"


def check_reservoir(impl, rng):
    cls = impl["EpisodicMemory"]
    cap, n, trials = 20, 400, 500
    counts = np.zeros(n)
    for _ in range(trials):
        mem = cls(cap, (1,))
        trial_rng = np.random.default_rng(rng.integers(2 ** 63))
        for i in range(n):
            mem.insert(np.array([float(i)]), 0, 0, trial_rng)
        counts[mem.inputs[:, 0].astype(int)] += 1
    p = cap / n
    sigma = math.sqrt(trials * p * (1 - p))
    for pos in (0, cap - 1, cap, n - 1):
        z = (counts[pos] - trials * p) / sigma
        assert abs(z) <= 4, f"stream position {pos} kept {counts[pos]:.0f}/{trials} times (z={z:.2f})"
    pval = stats.chisquare(counts).pvalue
    assert pval > 0.001, f"inclusion counts not uniform, chi-square p={pval:.2g}"


def check_hetero_sampling(impl, rng):
    f = impl["hetero_masks"]
    p = np.array([1.0, 0.6, 0.3, 0.1, 0.0])
    draws = 40000
    freq = f(p, 2, rng, draws).mean(axis=0)
    exact = np.array(successive_inclusion(p.tolist(), 2))
    sd = np.sqrt(exact * (1 - exact) / draws)
    z = np.abs(freq - exact) / np.where(sd > 0, sd, 1.0)
    assert freq[-1] == 0.0, "zero-probability unit was kept"
    assert z.max() <= 4.5, f"inclusion {np.round(freq, 4).tolist()} vs exact {np.round(exact, 4).tolist()}"


def _grad_nets(rng):
    yield Network([Conv2d(1, 2, rng=rng), KWTA(0.5), MaxPool2d(2), Flatten(), Linear(8, 3, rng=rng)], (1, 4, 4), 3)
    yield Network([Conv2d(1, 3, rng=rng), ReLU(), Conv2d(3, 2, rng=rng), KWTA(0.5, dropout=True), MaxPool2d(2),
                   Flatten(), Linear(8, 3, rng=rng)], (1, 4, 4), 3)
    yield Network([Flatten(), Linear(16, 6, rng=rng), KWTA(0.5), Linear(6, 3, rng=rng)], (16,), 3)


def grad_check(net, x, y, masks=None, step=1e-5):
    """Fraction of parameter entries whose backward gradient matches central
    differences within ``GRAD_TOL``, with k-WTA selections frozen."""
    fwd = net.forward(x, masks=masks)
    frozen = fwd.selection
    grads = net.backward(cross_entropy(fwd.logits, y)[1], fwd)
    good = total = 0
    worst = 0.0
    for name, p in net.named_params().items():
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = cross_entropy(net.forward(x, masks=masks, frozen=frozen).logits, y)[0]
            flat[j] = orig - step
            down = cross_entropy(net.forward(x, masks=masks, frozen=frozen).logits, y)[0]
            flat[j] = orig
            num = (up - down) / (2 * step)
            ana = grads[name].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR)
            worst = max(worst, err)
            good += err < GRAD_TOL
            total += 1
    return good, total, worst


def check_gradients(impl, rng):
    for net in _grad_nets(rng):
        x = rng.normal(size=(3,) + net.input_shape)
        y = rng.integers(0, 3, 3)
        masks = {i: (rng.random((3, net.layers[i].n_filters)) < 0.8).astype(np.float64) for i in net.dropout_hooks}
        good, total, worst = grad_check(net, x, y, masks)
        assert good >= 0.99 * total, f"{total - good}/{total} gradient entries off (worst rel err {worst:.2g})"


CHECKS = [
    ("formula.heterogeneous_retention", check_hetero_formula),
    ("formula.semantic_retention", check_semantic_formula),
    ("formula.stochastic_ema", check_ema_formula),
    ("formula.consolidation_loss", check_loss_formula),
    ("kwta.exact_sparsity", check_kwta_sparsity),
    ("kwta.top_k_oracle", check_kwta_topk),
    ("reservoir.uniform_inclusion", check_reservoir),
    ("dropout.heterogeneous_sampling", check_hetero_sampling),
    ("backprop.finite_differences", check_gradients),
]


def run_checks(overrides=None, seed=0):
    """Run every check; ``overrides`` replaces entries of the implementation table."""
    impl = default_impl()
    impl.update(overrides or {})
    outcomes = []
    for i, (ident, fn) in enumerate(CHECKS):
        t0 = time.perf_counter()
        try:
            fn(impl, np.random.default_rng([seed, i]))
            ok, msg = True, ""
        except AssertionError as exc:
            ok, msg = False, str(exc)
        except Exception as exc:  # a crash is a failed invariant too
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        outcomes.append(Outcome(ident, ok, msg, time.perf_counter() - t0))
    return outcomes
