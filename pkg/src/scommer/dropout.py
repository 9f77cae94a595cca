"""Activity counters and heterogeneous/semantic dropout.

Heterogeneous retention falls off with a unit's global activation count, which
pushes new tasks onto rarely used units. Semantic retention grows with the
unit's count for the sample's class, reinforcing per-class sparse codes.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def retain_count(ratio, n_units, factor=1.1):
    """``min(N, ceil(factor * ratio * N))`` units kept by a heterogeneous mask."""
    return min(n_units, math.ceil(factor * ratio * n_units - 1e-9))


def init_hetero(n_units, ratio, rng, factor=1.1):
    """Retention 1 on a random subset of ``retain_count`` units, 0 elsewhere."""
    p = np.zeros(n_units)
    p[rng.permutation(n_units)[:retain_count(ratio, n_units, factor)]] = 1.0
    return p


def update_hetero(global_counts, pi_h):
    """exp(-pi_h * A_g / max A_g); all ones when nothing has fired yet."""
    if pi_h < 0:
        raise ConfigError(f"pi_h must be nonnegative, got {pi_h}")
    counts = np.asarray(global_counts, dtype=np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        return np.ones_like(counts)
    return np.exp(-(counts / top) * pi_h)


def update_semantic(class_counts, pi_s):
    """Row-wise ``1 - exp(-pi_s * A_s[c] / max A_s[c])``; empty rows stay zero."""
    if pi_s < 0:
        raise ConfigError(f"pi_s must be nonnegative, got {pi_s}")
    counts = np.asarray(class_counts, dtype=np.float64)
    top = counts.max(axis=1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    # expm1 keeps full relative precision for rarely active units
    return np.where(top > 0, -np.expm1(-(counts / safe) * pi_s), 0.0)


def row_available(p_row):
    return bool(np.any(np.asarray(p_row) > 0))


def hetero_masks(p_h, n_retain, rng, size):
    """``size`` masks, each keeping ``n_retain`` units drawn without replacement
    with probability proportional to ``p_h``.

    Uses exponential keys ``log(u) / p`` (Efraimidis-Spirakis), which is the same
    distribution as drawing one unit at a time and renormalising. Zero-probability
    units are never kept, so a mask can come out short.
    """
    p_h = np.asarray(p_h, dtype=np.float64)
    if not np.any(p_h > 0):
        raise ValueError("heterogeneous retention probabilities are all zero")
    u = 1.0 - rng.random((size, p_h.size))  # (0, 1]
    with np.errstate(divide="ignore"):
        keys = np.where(p_h > 0, np.log(u) / np.where(p_h > 0, p_h, 1.0), -np.inf)
    order = np.argsort(-keys, axis=1, kind="stable")[:, :n_retain]
    masks = np.zeros((size, p_h.size))
    np.put_along_axis(masks, order, 1.0, axis=1)
    return masks * (p_h > 0)


def hetero_mask(p_h, ratio, rng, factor=1.1):
    return hetero_masks(p_h, retain_count(ratio, len(p_h), factor), rng, 1)[0]


def semantic_mask(p_row, rng):
    """Keep each unit independently with its class-wise retention probability."""
    p_row = np.asarray(p_row, dtype=np.float64)
    if not row_available(p_row):
        raise ValueError("semantic row unavailable (no recorded activity for this class)")
    return (rng.random(p_row.size) <= p_row).astype(np.float64)


@dataclass
class LayerActivity:
    ratio: float
    global_counts: np.ndarray  # (N,) int64
    class_counts: np.ndarray  # (C, N) int64
    p_hetero: np.ndarray  # (N,)
    p_semantic: np.ndarray  # (C, N)

    @property
    def n_units(self):
        return self.global_counts.size


class ActivityState:
    """Per-hook activity counters plus the dropout probabilities derived from them."""

    def __init__(self, hooks, n_classes, pi_h=0.5, pi_s=2.0, warmup_epochs=1,
                 retain_factor=1.1, rng=None):
        """``hooks`` maps hook layer index -> (n_units, %k)."""
        problems = []
        if pi_h < 0:
            problems.append(f"pi_h must be nonnegative, got {pi_h}")
        if pi_s < 0:
            problems.append(f"pi_s must be nonnegative, got {pi_s}")
        if warmup_epochs < 0 or int(warmup_epochs) != warmup_epochs:
            problems.append(f"warmup_epochs must be a nonnegative integer, got {warmup_epochs}")
        if problems:
            raise ConfigError(problems)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_classes = n_classes
        self.pi_h, self.pi_s = float(pi_h), float(pi_s)
        self.warmup_epochs = int(warmup_epochs)
        self.retain_factor = float(retain_factor)
        self.layers = {}
        for idx, (n, ratio) in sorted(hooks.items()):
            self.layers[idx] = LayerActivity(
                ratio=float(ratio),
                global_counts=np.zeros(n, dtype=np.int64),
                class_counts=np.zeros((n_classes, n), dtype=np.int64),
                p_hetero=init_hetero(n, ratio, rng, retain_factor),
                p_semantic=np.zeros((n_classes, n)),
            )

    def record(self, activity, labels, enabled=True):
        """Count every filter with a nonzero post-pipeline score, per sample."""
        if not enabled:
            return self
        labels = np.asarray(labels, dtype=np.int64)
        for idx, layer in self.layers.items():
            active = (np.asarray(activity[idx]) > 0).astype(np.int64)
            layer.global_counts += active.sum(axis=0)
            np.add.at(layer.class_counts, labels, active)
        return self

    def refresh_semantic(self):
        for layer in self.layers.values():
            layer.p_semantic = update_semantic(layer.class_counts, self.pi_s)

    def refresh_hetero(self):
        for layer in self.layers.values():
            layer.p_hetero = update_hetero(layer.global_counts, self.pi_h)

    def semantic_due(self, epoch):
        """Whether P_s is refreshed at the end of 0-based ``epoch``."""
        return epoch >= self.warmup_epochs

    def select_masks(self, labels, layer_idx, rng):
        """One retention mask per sample: semantic where the class row is available,
        heterogeneous otherwise. Both kinds are drawn for every sample so the RNG
        stream does not depend on which rows are populated."""
        layer = self.layers[layer_idx]
        labels = np.asarray(labels, dtype=np.int64)
        b = labels.size
        n_retain = retain_count(layer.ratio, layer.n_units, self.retain_factor)
        het = hetero_masks(layer.p_hetero, n_retain, rng, b)
        rows = layer.p_semantic[labels]
        sem = (rng.random(rows.shape) <= rows).astype(np.float64)
        use_sem = (rows > 0).any(axis=1)
        return np.where(use_sem[:, None], sem, het)

    def select_mask(self, label, layer_idx, rng):
        return self.select_masks([label], layer_idx, rng)[0]

    def copy(self):
        clone = object.__new__(ActivityState)
        clone.__dict__.update(self.__dict__)
        clone.layers = {
            idx: LayerActivity(l.ratio, l.global_counts.copy(), l.class_counts.copy(),
                               l.p_hetero.copy(), l.p_semantic.copy())
            for idx, l in self.layers.items()
        }
        return clone

    def to_dict(self):
        return {
            "n_classes": self.n_classes,
            "pi_h": self.pi_h,
            "pi_s": self.pi_s,
            "warmup_epochs": self.warmup_epochs,
            "retain_factor": self.retain_factor,
            "layers": {
                str(idx): {
                    "ratio": l.ratio,
                    "global_counts": l.global_counts.tolist(),
                    "class_counts": l.class_counts.tolist(),
                    "p_hetero": l.p_hetero.tolist(),
                    "p_semantic": l.p_semantic.tolist(),
                }
                for idx, l in self.layers.items()
            },
        }

    @classmethod
    def from_dict(cls, data):
        state = object.__new__(cls)
        state.n_classes = data["n_classes"]
        state.pi_h, state.pi_s = data["pi_h"], data["pi_s"]
        state.warmup_epochs = data["warmup_epochs"]
        state.retain_factor = data["retain_factor"]
        state.layers = {
            int(idx): LayerActivity(
                ratio=l["ratio"],
                global_counts=np.asarray(l["global_counts"], dtype=np.int64),
                class_counts=np.asarray(l["class_counts"], dtype=np.int64).reshape(state.n_classes, -1),
                p_hetero=np.asarray(l["p_hetero"], dtype=np.float64),
                p_semantic=np.asarray(l["p_semantic"], dtype=np.float64).reshape(state.n_classes, -1),
            )
            for idx, l in data["layers"].items()
        }
        return state

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def record_activity(scores, labels, state, layer_idx=None, enabled=True):
    """Functional form of :meth:`ActivityState.record` for a single layer or all."""
    if layer_idx is None:
        return state.record(scores, labels, enabled)
    if enabled:
        layer = state.layers[layer_idx]
        active = (np.atleast_2d(scores) > 0).astype(np.int64)
        layer.global_counts += active.sum(axis=0)
        np.add.at(layer.class_counts, np.atleast_1d(labels), active)
    return state


def collect_activity(net, inputs, labels, n_classes, batch_size=256):
    """Eval-mode class-wise activity counts on a dataset, using fresh counters."""
    counts = {i: np.zeros((n_classes, net.layers[i].n_filters), dtype=np.int64) for i in net.hooks}
    for start in range(0, len(inputs), batch_size):
        fwd = net.forward(inputs[start:start + batch_size], mode="eval")
        y = labels[start:start + batch_size]
        for i in net.hooks:
            np.add.at(counts[i], y, (fwd.activity[i] > 0).astype(np.int64))
    return counts
