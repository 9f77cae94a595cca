"""Episodic reservoir buffer and the EMA long-term memory update."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


class EpisodicMemory:
    """Fixed-capacity reservoir of ``(input, label, task)`` triples."""

    def __init__(self, capacity, input_shape):
        if capacity < 0:
            raise ConfigError(f"buffer capacity must be nonnegative, got {capacity}")
        self.capacity = int(capacity)
        self.inputs = np.zeros((self.capacity,) + tuple(input_shape))
        self.labels = np.zeros(self.capacity, dtype=np.int64)
        self.tasks = np.zeros(self.capacity, dtype=np.int64)
        self.seen = 0

    def __len__(self):
        return min(self.seen, self.capacity)

    def insert(self, x, label, task, rng):
        """Offer one item. Slot ``j ~ U{0..seen-1}`` is overwritten when ``j < M``,
        i.e. with probability ``M / seen`` once the buffer is full."""
        self.seen += 1
        if self.capacity == 0:
            return
        if self.seen <= self.capacity:
            slot = self.seen - 1
        else:
            slot = int(rng.integers(0, self.seen))
            if slot >= self.capacity:
                return
        self.inputs[slot] = x
        self.labels[slot] = label
        self.tasks[slot] = task

    def extend(self, xs, labels, task, rng):
        """Offer a batch in order; same distribution as repeated :meth:`insert`,
        with the slot draws for the full-buffer part made in one call."""
        n = len(labels)
        if n == 0:
            return
        seen = self.seen + np.arange(1, n + 1)
        self.seen += n
        if self.capacity == 0:
            return
        slots = seen - 1
        full = seen > self.capacity
        if full.any():
            slots[full] = rng.integers(0, seen[full])
        for i in np.flatnonzero(slots < self.capacity):
            self.inputs[slots[i]] = xs[i]
            self.labels[slots[i]] = labels[i]
            self.tasks[slots[i]] = task

    def sample(self, batch_size, rng):
        """Uniform draw with replacement; ``None`` when the buffer is empty."""
        n = len(self)
        if n == 0:
            return None
        idx = rng.integers(0, n, size=batch_size)
        return self.inputs[idx], self.labels[idx], self.tasks[idx]

    def to_tensors(self, prefix="buffer"):
        n = len(self)
        return {
            f"{prefix}.inputs": self.inputs[:n],
            f"{prefix}.labels": self.labels[:n],
            f"{prefix}.tasks": self.tasks[:n],
            f"{prefix}.meta": np.array([self.capacity, self.seen], dtype=np.int64),
        }

    @classmethod
    def from_tensors(cls, tensors, prefix="buffer"):
        capacity, seen = (int(v) for v in tensors[f"{prefix}.meta"])
        inputs = tensors[f"{prefix}.inputs"]
        mem = cls(capacity, inputs.shape[1:])
        n = len(inputs)
        mem.inputs[:n] = inputs
        mem.labels[:n] = tensors[f"{prefix}.labels"]
        mem.tasks[:n] = tensors[f"{prefix}.tasks"]
        mem.seen = seen
        return mem


def reservoir_insert(mem, item, rng):
    x, label, *task = item
    mem.insert(x, label, task[0] if task else 0, rng)
    return mem


def sample_batch(mem, batch_size, rng):
    return mem.sample(batch_size, rng)


@dataclass(frozen=True)
class ConsolidationConfig:
    alpha: float = 0.999
    rate: float = 0.5

    def __post_init__(self):
        problems = [f"{name} must lie in [0, 1], got {v}"
                    for name, v in (("alpha", self.alpha), ("rate", self.rate)) if not 0.0 <= v <= 1.0]
        if problems:
            raise ConfigError(problems)


def ema_update(stable, working, cfg, rng):
    """Stochastic EMA: with probability ``rate`` (one draw for the whole network)
    set every parameter to ``alpha * stable + (1 - alpha) * working``.

    Mutates ``stable`` in place and returns whether the update fired.
    """
    s_params, w_params = stable.named_params(), working.named_params()
    if s_params.keys() != w_params.keys() or any(s_params[k].shape != w_params[k].shape for k in s_params):
        raise ShapeError("long-term and working memories have different architectures")
    if not cfg.rate > rng.random():
        return False
    for name, p in s_params.items():
        p *= cfg.alpha
        p += (1.0 - cfg.alpha) * w_params[name]
    return True
