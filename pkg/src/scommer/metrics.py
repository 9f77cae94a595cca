"""Evaluation readouts: Class-IL/Task-IL accuracy, task matrices, recency bias,
class-code similarity and the working vs long-term comparison.

Every function here is read-only with respect to the networks and counters it
is given; networks always run in eval mode (k-WTA on, no dropout).
"""

import numpy as np


def predict_logits(net, inputs, batch_size=500):
    if len(inputs) == 0:
        return np.zeros((0, net.class_count))
    return np.concatenate([net.forward(inputs[i:i + batch_size], mode="eval").logits
                           for i in range(0, len(inputs), batch_size)])


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def class_il_from_logits(logits_per_task, labels_per_task):
    """Per-task accuracy with argmax over all outputs, plus the pooled mean."""
    correct = [int((np.argmax(l, axis=1) == y).sum()) for l, y in zip(logits_per_task, labels_per_task)]
    sizes = [len(y) for y in labels_per_task]
    per_task = [c / n if n else float("nan") for c, n in zip(correct, sizes)]
    total = sum(sizes)
    return per_task, (sum(correct) / total if total else float("nan"))


def task_il_from_logits(logits_per_task, labels_per_task, task_classes):
    """Per-task accuracy with argmax restricted to that task's class columns,
    plus the pooled mean."""
    correct, sizes = [], []
    for logits, y, classes in zip(logits_per_task, labels_per_task, task_classes):
        cols = np.asarray(sorted(classes))
        pred = cols[np.argmax(logits[:, cols], axis=1)]
        correct.append(int((pred == y).sum()))
        sizes.append(len(y))
    per_task = [c / n if n else float("nan") for c, n in zip(correct, sizes)]
    total = sum(sizes)
    return per_task, (sum(correct) / total if total else float("nan"))


def class_il_accuracy(net, test_sets, batch_size=500):
    """``test_sets`` is a list of ``(inputs, labels)`` for tasks 1..t."""
    logits = [predict_logits(net, x, batch_size) for x, _ in test_sets]
    return class_il_from_logits(logits, [y for _, y in test_sets])


def task_il_accuracy(net, test_sets, task_classes, batch_size=500):
    logits = [predict_logits(net, x, batch_size) for x, _ in test_sets]
    return task_il_from_logits(logits, [y for _, y in test_sets], task_classes)


def task_matrix(rows):
    """Lower-triangular matrix from per-task accuracy rows.

    ``rows[i]`` lists accuracies on tasks ``0..i`` after training task ``i``;
    entries above the diagonal are NaN.
    """
    t = len(rows)
    mat = np.full((t, t), np.nan)
    for i, row in enumerate(rows):
        if len(row) != i + 1:
            raise ValueError(f"row {i} has {len(row)} entries, expected {i + 1}")
        mat[i, :i + 1] = row
    return mat


def forgetting(mat):
    """Final accuracy minus just-learned accuracy, per task (last row minus diagonal)."""
    return mat[-1] - np.diag(mat)


def recency_from_logits(logits, task_classes):
    """Softmax over the seen classes, mass summed per task block, averaged over samples."""
    blocks = [np.asarray(sorted(c)) for c in task_classes]
    cols = np.unique(np.concatenate(blocks))
    probs = softmax(logits[:, cols])
    pos = {c: i for i, c in enumerate(cols)}
    mass = np.stack([probs[:, [pos[c] for c in b]].sum(axis=1) for b in blocks], axis=1)
    return mass.mean(axis=0)


def recency_probabilities(net, inputs, task_classes, batch_size=500):
    return recency_from_logits(predict_logits(net, inputs, batch_size), task_classes)


def activation_similarity(counts):
    """Cosine similarity between class rows of an activity-count matrix.

    Rows with no activity have zero similarity with everything, including
    themselves.
    """
    counts = np.asarray(counts, dtype=np.float64)
    norms = np.linalg.norm(counts, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = counts / safe[:, None]
    sim = unit @ unit.T
    live = norms > 0
    sim[~live, :] = 0.0
    sim[:, ~live] = 0.0
    return np.clip(sim, 0.0, 1.0)


def dual_memory_report(working, stable, test_sets, task_classes, batch_size=500):
    """Working and long-term memory evaluated identically, one row per task."""
    rows = []
    w_cil, w_mean = class_il_accuracy(working, test_sets, batch_size)
    s_cil, s_mean = class_il_accuracy(stable, test_sets, batch_size)
    w_til, w_tmean = task_il_accuracy(working, test_sets, task_classes, batch_size)
    s_til, s_tmean = task_il_accuracy(stable, test_sets, task_classes, batch_size)
    for t in range(len(test_sets)):
        rows.append({"task": t, "class_il_working": w_cil[t], "class_il_long_term": s_cil[t],
                     "task_il_working": w_til[t], "task_il_long_term": s_til[t]})
    rows.append({"task": "mean", "class_il_working": w_mean, "class_il_long_term": s_mean,
                 "task_il_working": w_tmean, "task_il_long_term": s_tmean})
    return rows
