"""SCoMMER training: interleaved replay, sparse coding, consistency loss and the
stochastic EMA long-term memory, plus the run orchestration shared by all methods.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .dropout import ActivityState, collect_activity
from .errors import ConfigError
from .memory import ConsolidationConfig, EpisodicMemory, ema_update
from .metrics import (
    activation_similarity,
    class_il_from_logits,
    predict_logits,
    recency_from_logits,
    task_il_from_logits,
    task_matrix,
)
from .streams import TaskSpec, gcil_stream, load_idx_pair, make_blobs, mnist_desk, split_stream
from .tensor_net import SGD, cross_entropy, mse, small_conv

log = logging.getLogger(__name__)

RNG_STREAMS = ("init", "order", "replay", "reservoir", "dropout", "ema", "augment")


def make_rngs(seed):
    """Independent generators per purpose, so switching one mechanism off never
    shifts the random numbers another mechanism sees."""
    return {name: np.random.default_rng([seed, i]) for i, name in enumerate(RNG_STREAMS)}


def random_crop(x, rng, pad=2):
    """Zero-pad by ``pad`` and crop back at a random offset, per sample."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offs = rng.integers(0, 2 * pad + 1, size=(b, 2))
    return np.stack([xp[i, :, dy:dy + h, dx:dx + w] for i, (dy, dx) in enumerate(offs)])


def compute_loss(logits_all, labels_all, logits_w_mem=None, z_s=None, gamma=0.0):
    """Cross-entropy on the interleaved batch plus ``gamma`` times the MSE between
    working-memory logits on replayed samples and the long-term targets ``z_s``.

    Returns ``(loss, grad_all, grad_mem)``; ``z_s`` is a constant.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be nonnegative, got {gamma}")
    loss, grad_all = cross_entropy(logits_all, labels_all)
    grad_mem = None
    if logits_w_mem is not None and z_s is not None and gamma > 0:
        kr, g = mse(logits_w_mem, z_s)
        loss += gamma * kr
        grad_mem = gamma * g
    return loss, grad_all, grad_mem


@dataclass
class StepInfo:
    loss: float
    replayed: bool
    ema: object  # True/False, or None without a long-term memory
    task_active: int
    buffer_active: int


class SCoMMER:
    """Working memory, long-term memory, episodic buffer and activity state.

    With ``sparsity``, ``dropout`` and ``ema`` all disabled (and ``gamma`` 0) this
    is experience replay; with the buffer size also 0 it is plain SGD.
    """

    method = "scommer"

    def __init__(self, cfg, input_shape, n_classes, rngs):
        self.cfg, self.rngs = cfg, rngs
        sp, do, em = cfg.sparsity, cfg.dropout, cfg.ema
        self.working = small_conv(
            input_shape, n_classes, cfg.model.channels, cfg.model.hidden,
            ratios=sp.ratios if sp.enabled else None,
            dropout_layer=sp.dropout_layer if (sp.enabled and do.enabled) else None,
            hidden_ratio=sp.hidden_ratio if sp.enabled else None,
            rng=rngs["init"],
        )
        self.stable = self.working.copy() if em.enabled else None
        self.consolidation = ConsolidationConfig(em.alpha, em.rate) if em.enabled else None
        self.gamma = em.gamma if em.enabled else 0.0
        self.memory = EpisodicMemory(cfg.buffer.size, input_shape)
        self.optimizer = SGD(cfg.training.lr, cfg.training.momentum, cfg.training.weight_decay)
        hooks = {i: (self.working.layers[i].n_filters, self.working.layers[i].ratio) for i in self.working.hooks}
        self.activity = ActivityState(
            hooks, n_classes, do.pi_h, do.pi_s, do.warmup_epochs, do.retain_factor, rng=rngs["dropout"]
        ) if hooks else None
        self.dropout_enabled = do.enabled and sp.enabled
        self.epoch = 0

    @property
    def reported(self):
        return self.stable if self.stable is not None else self.working

    def models(self):
        out = {"working": self.working}
        if self.stable is not None:
            out["long_term"] = self.stable
        return out

    def _masks(self, labels):
        if not self.dropout_enabled:
            return None
        return {i: self.activity.select_masks(labels, i, self.rngs["dropout"]) for i in self.working.dropout_hooks}

    def train_step(self, x_t, y_t, task_id):
        b_t = len(y_t)
        replay = self.memory.sample(self.cfg.buffer.batch_size, self.rngs["replay"])
        if replay is not None:
            x_m, y_m, _ = replay
            x, y = np.concatenate([x_t, x_m]), np.concatenate([y_t, y_m])
        else:
            x, y = x_t, y_t
        if self.cfg.buffer.augment:
            x = random_crop(x, self.rngs["augment"])
            if replay is not None:
                x_m = x[b_t:]

        fwd = self.working.forward(x, masks=self._masks(y), mode="train")
        z_s = None
        if replay is not None and self.stable is not None and self.gamma > 0:
            z_s = self.stable.forward(x_m, mode="eval").logits
        loss, grad, grad_mem = compute_loss(
            fwd.logits, y, fwd.logits[b_t:] if z_s is not None else None, z_s, self.gamma
        )
        if grad_mem is not None:
            grad[b_t:] += grad_mem
        self.optimizer.step(self.working, self.working.backward(grad, fwd))

        applied = None
        if self.stable is not None:
            applied = ema_update(self.stable, self.working, self.consolidation, self.rngs["ema"])

        self.memory.extend(x_t, y_t, task_id, self.rngs["reservoir"])

        task_active = buffer_active = 0
        if self.activity is not None:
            counting = self.cfg.dropout.count_during_warmup or self.activity.semantic_due(self.epoch)
            task_act = {i: a[:b_t] for i, a in fwd.activity.items()}
            # replayed samples never touch the counters
            self.activity.record(task_act, y_t, enabled=counting)
            task_active = int(sum((a > 0).sum() for a in task_act.values()))
            buffer_active = int(sum((a[b_t:] > 0).sum() for a in fwd.activity.values()))
        return StepInfo(loss, replay is not None, applied, task_active, buffer_active)

    def start_epoch(self, epoch):
        self.epoch = epoch

    def end_epoch(self, epoch):
        """Refresh semantic probabilities once the warm-up has passed."""
        if self.dropout_enabled and self.activity.semantic_due(epoch):
            self.activity.refresh_semantic()
            return True
        return False

    def end_task(self, task_id):
        if self.dropout_enabled:
            self.activity.refresh_hetero()
            return True
        return False


def train_task(learner, dataset, spec, epochs, rngs, batch_size, emit=None):
    """Run ``epochs`` passes over one task, with the epoch/task-boundary updates."""
    if epochs < 1:
        raise ConfigError("epochs must be at least 1")
    emit = emit or (lambda event: None)
    for epoch in range(epochs):
        learner.start_epoch(epoch)
        order = rngs["order"].permutation(spec.train_indices)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            info = learner.train_step(dataset.train_x[idx], dataset.train_y[idx], spec.task_id)
            emit({"event": "step", "task": spec.task_id, "epoch": epoch, "loss": info.loss,
                  "replay": info.replayed, "ema": info.ema, "task_active": info.task_active,
                  "buffer_active": info.buffer_active})
        if learner.end_epoch(epoch):
            emit({"event": "semantic_update", "task": spec.task_id, "epoch": epoch})
    if learner.end_task(spec.task_id):
        emit({"event": "hetero_update", "task": spec.task_id})
    return learner


def load_dataset(cfg):
    ds = cfg.dataset
    if ds.kind == "mnist_desk":
        data = mnist_desk()
    elif ds.kind == "idx":
        data = load_idx_pair(ds.train_images, ds.train_labels, ds.test_images, ds.test_labels)
    else:
        data = make_blobs(ds.blob_classes, ds.blob_train_per_class, ds.blob_test_per_class,
                          ds.blob_size, ds.blob_noise, seed=0)
    if ds.train_per_class or ds.test_per_class:
        data = data.limit(ds.train_per_class, ds.test_per_class)
    return data


def build_streams(cfg, dataset):
    ds = cfg.dataset
    if ds.protocol == "class_il":
        return split_stream(dataset, ds.n_tasks)
    g = ds.gcil
    return gcil_stream(dataset, g.n_tasks, g.samples_per_task, g.max_classes, g.weighting, g.seed)


def make_learner(cfg, input_shape, n_classes, rngs):
    from .baselines import ER, SGDLearner

    if cfg.method == "scommer":
        return SCoMMER(cfg, input_shape, n_classes, rngs)
    if cfg.method == "er":
        return ER(cfg, input_shape, n_classes, rngs)
    return SGDLearner(cfg, input_shape, n_classes, rngs)


@dataclass
class RunResult:
    method: str
    seed: int
    specs: list
    rows: dict  # memory -> protocol -> list of per-task rows
    final: dict  # flat metric name -> value
    per_task: dict  # memory -> protocol -> final per-task accuracies
    recency: list
    similarity: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    learner: object = None

    def matrix(self, memory="reported", protocol="class_il"):
        return task_matrix(self.rows[self._mem(memory)][protocol])

    def _mem(self, memory):
        if memory == "reported":
            return "long_term" if "long_term" in self.rows else "working"
        return memory


def _evaluate(models, dataset, specs, batch_size):
    xs = [dataset.test_x[s.test_indices] for s in specs]
    ys = [dataset.test_y[s.test_indices] for s in specs]
    out = {}
    for name, net in models.items():
        logits = [predict_logits(net, x, batch_size) for x in xs]
        cil, cil_mean = class_il_from_logits(logits, ys)
        til, til_mean = task_il_from_logits(logits, ys, [s.classes for s in specs])
        out[name] = {"class_il": cil, "class_il_mean": cil_mean, "task_il": til, "task_il_mean": til_mean}
    return out


def run_experiment(cfg, seed, dataset=None, observer=None):
    """Train over the whole task sequence for one seed.

    After every task both memories are evaluated on the test sets of all tasks
    seen so far. ``observer(event, learner)`` sees every logged event.
    """
    dataset = dataset if dataset is not None else load_dataset(cfg)
    specs = build_streams(cfg, dataset)
    rngs = make_rngs(seed)
    learner = make_learner(cfg, dataset.input_shape, dataset.n_classes, rngs)
    events = []

    def emit(event):
        events.append(event)
        if observer is not None:
            observer(event, learner)

    bs, ebs = cfg.training.batch_size, cfg.training.eval_batch_size
    rows = {name: {"class_il": [], "task_il": []} for name in learner.models()}
    if cfg.method == "joint":
        union = TaskSpec(0, sorted({c for s in specs for c in s.classes}), {},
                         np.unique(np.concatenate([s.train_indices for s in specs])),
                         np.unique(np.concatenate([s.test_indices for s in specs])))
        train_task(learner, dataset, union, cfg.training.epochs, rngs, bs, emit)
        evals = _eval_into(None, learner, dataset, specs, ebs, emit, len(specs) - 1)
    else:
        for t, spec in enumerate(specs):
            emit({"event": "task_start", "task": t})
            train_task(learner, dataset, spec, cfg.training.epochs, rngs, bs, emit)
            evals = _eval_into(rows, learner, dataset, specs[:t + 1], ebs, emit, t)

    reported = "long_term" if "long_term" in evals else "working"
    final, per_task = {}, {}
    for name, ev in evals.items():
        final[f"class_il_{name}"] = ev["class_il_mean"]
        final[f"task_il_{name}"] = ev["task_il_mean"]
        per_task[name] = {"class_il": ev["class_il"], "task_il": ev["task_il"]}
    final["class_il"] = evals[reported]["class_il_mean"]
    final["task_il"] = evals[reported]["task_il_mean"]

    emit({"event": "eval_start", "task": len(specs) - 1})
    test_union = np.concatenate([s.test_indices for s in specs])
    logits = predict_logits(learner.reported, dataset.test_x[test_union], ebs)
    recency = recency_from_logits(logits, [s.classes for s in specs]).tolist()
    final["recency_std"] = float(np.std(recency))
    similarity = {}
    if learner.working.hooks:
        counts = collect_activity(learner.working, dataset.test_x[test_union], dataset.test_y[test_union],
                                  dataset.n_classes, ebs)
        for i, c in counts.items():
            similarity[i] = {"test_counts": c, "cosine": activation_similarity(c)}
    emit({"event": "eval_end", "task": len(specs) - 1})
    return RunResult(cfg.method, seed, specs, rows, final, per_task, recency, similarity, events, learner)


def _eval_into(rows, learner, dataset, seen, batch_size, emit, t):
    emit({"event": "eval_start", "task": t})
    evals = _evaluate(learner.models(), dataset, seen, batch_size)
    if rows is not None:
        for name, ev in evals.items():
            rows[name]["class_il"].append(ev["class_il"])
            rows[name]["task_il"].append(ev["task_il"])
    emit({"event": "eval_end", "task": t})
    return evals
