"""Run artifacts: per-seed directories, metric tables, seed summaries, ablations."""

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import __version__
from .config import validate
from .metrics import dual_memory_report
from .streams import save_streams
from .tensor_net import save_tensors

log = logging.getLogger(__name__)

UNUSED_SECTIONS = {
    "scommer": [],
    "er": ["sparsity", "dropout", "ema"],
    "sgd": ["buffer", "sparsity", "dropout", "ema"],
    "joint": ["buffer", "sparsity", "dropout", "ema"],
}

# (name, sparse activations, long-term memory, semantic dropout, published full-scale Class-IL accuracy)
ABLATIONS = [
    ("full", True, True, True, 69.19),
    ("no_semantic_dropout", True, True, False, 67.38),
    ("long_term_only", False, True, False, 61.88),
    ("sparse_er", True, False, False, 49.44),
    ("er", False, False, False, 44.79),
]


def ablation_config(cfg, sparse, long_term, dropout):
    data = cfg.model_dump()
    data["method"] = "scommer"
    data["sparsity"]["enabled"] = sparse
    data["dropout"]["enabled"] = dropout
    data["ema"]["enabled"] = long_term
    if not long_term:
        data["ema"]["gamma"] = 0.0
    return validate(data)


def _num(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_matrix(path, mat):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["after_task"] + [f"task_{j}" for j in range(mat.shape[1])])
        for i, row in enumerate(mat):
            w.writerow([i] + [_num(v) for v in row])


def metric_rows(result):
    """Flat ``(method, seed, task, metric, value)`` rows for one run."""
    rows = []
    for memory, prot in result.per_task.items():
        for protocol, accs in prot.items():
            for t, a in enumerate(accs):
                rows.append((result.method, result.seed, t, f"{protocol}_{memory}", a))
    for name, value in result.final.items():
        rows.append((result.method, result.seed, "final", name, value))
    for t, p in enumerate(result.recency):
        rows.append((result.method, result.seed, t, "recency_probability", p))
    return rows


def write_run(result, cfg, out_dir, dataset=None):
    """Write one seed's artifacts into ``out_dir`` (created if needed)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    learner = result.learner
    for memory, prot in result.rows.items():
        for protocol, rows in prot.items():
            if rows:
                _write_matrix(out / f"accuracy_{memory}_{protocol}.csv", result.matrix(memory, protocol))
    summary = {
        "method": result.method,
        "seed": result.seed,
        "engine_version": __version__,
        "reported_memory": "long_term" if learner.stable is not None else "working",
        "final": result.final,
        "final_per_task": result.per_task,
        "recency_probabilities": result.recency,
    }
    if learner.stable is not None and dataset is not None:
        sets = [(dataset.test_x[s.test_indices], dataset.test_y[s.test_indices]) for s in result.specs]
        summary["dual_memory"] = dual_memory_report(
            learner.working, learner.stable, sets, [s.classes for s in result.specs],
            cfg.training.eval_batch_size)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, allow_nan=False, default=_nan_none))
    with open(out / "metrics.tsv", "w") as fh:
        fh.write("method\tseed\ttask\tmetric\tvalue\n")
        for row in metric_rows(result):
            fh.write("\t".join(str(x) for x in row[:4]) + f"\t{_num(row[4])}\n")
    save_streams(out / "streams.json", result.specs)
    if cfg.output.events:
        with open(out / "events.jsonl", "w") as fh:
            for ev in result.events:
                fh.write(json.dumps(ev) + "\n")
    if cfg.output.activity and learner.activity is not None:
        learner.activity.save(out / "activity.json")
        for layer, sim in result.similarity.items():
            np.savetxt(out / f"test_activity_layer{layer}.csv", sim["test_counts"], fmt="%d", delimiter=",")
            np.savetxt(out / f"similarity_layer{layer}.csv", sim["cosine"], fmt="%.17g", delimiter=",")
    if cfg.output.checkpoints:
        save_tensors(out / "checkpoint.npz", checkpoint_tensors(learner))
    return out


def _nan_none(o):
    raise TypeError(f"not serializable: {type(o)}")


def checkpoint_tensors(learner):
    tensors = {f"working.{k}": v for k, v in learner.working.named_params().items()}
    if learner.stable is not None:
        tensors.update({f"long_term.{k}": v for k, v in learner.stable.named_params().items()})
    memory = getattr(learner, "memory", None)
    if memory is not None:
        tensors.update(memory.to_tensors())
    return tensors


def summarize(results):
    """Mean and population std over seeds for each final metric."""
    names = list(results[0].final)
    out = {}
    for name in names:
        vals = np.array([r.final[name] for r in results], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": len(vals),
                     "values": vals.tolist()}
    return out


def fmt_pm(stat, scale=100.0):
    return f"{stat['mean'] * scale:.2f} ± {stat['std'] * scale:.2f}"


def write_summary(results, cfg, out_dir, config_text):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config_text)
    unused = UNUSED_SECTIONS[cfg.method]
    manifest = {"engine_version": __version__, "method": cfg.method,
                "seeds": [r.seed for r in results], "unused_sections": unused}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    stats = summarize(results)
    (out / "summary.json").write_text(json.dumps(stats, indent=1))
    with open(out / "summary.tsv", "w") as fh:
        fh.write("method\tmetric\tmean\tstd\tn\tpercent\n")
        for name, st in stats.items():
            pct = fmt_pm(st) if name != "recency_std" else f"{st['mean']:.4f} ± {st['std']:.4f}"
            fh.write(f"{cfg.method}\t{name}\t{st['mean']!r}\t{st['std']!r}\t{st['n']}\t{pct}\n")
    with open(out / "metrics.tsv", "w") as fh:
        fh.write("method\tseed\ttask\tmetric\tvalue\n")
        for r in results:
            for row in metric_rows(r):
                fh.write("\t".join(str(x) for x in row[:4]) + f"\t{_num(row[4])}\n")
    return stats


def write_ablation(table, out_dir):
    """``table`` is a list of ``(name, flags, stats)`` rows."""
    out = Path(out_dir)
    with open(out / "ablation.tsv", "w") as fh:
        fh.write("row\tsparse_activations\tlong_term_memory\tsemantic_dropout\tclass_il_mean\tclass_il_std"
                 "\tpaper_full_scale_not_a_target\n")
        for name, (sp, lt, sd, reference), st in table:
            c = st["class_il"]
            fh.write(f"{name}\t{int(sp)}\t{int(lt)}\t{int(sd)}\t{c['mean']!r}\t{c['std']!r}\t{reference}\n")
    mark = {True: "x", False: " "}
    lines = ["| Sparse | Long-term | Semantic dropout | Class-IL (desk) | paper, full scale - not a target |",
             "|---|---|---|---|---|"]
    for name, (sp, lt, sd, reference), st in table:
        lines.append(f"| [{mark[sp]}] | [{mark[lt]}] | [{mark[sd]}] | {fmt_pm(st['class_il'])} | {reference:.2f} |")
    (out / "ablation.md").write_text("\n".join(lines) + "\n")
    return out / "ablation.tsv"
