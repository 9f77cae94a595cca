import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from scommer import cli, verify
from scommer.config import apply_overrides, load_config, validate
from scommer.errors import ConfigError
from scommer.report import ABLATIONS
from scommer.tensor_net import load_tensors

TINY = {
    "model": {"channels": [4, 8], "hidden": 16},
    "dataset": {"kind": "blobs", "n_tasks": 5, "blob_train_per_class": 8, "blob_test_per_class": 3},
    "buffer": {"size": 10, "batch_size": 4},
    "sparsity": {"ratios": [0.75, 0.5]},
    "ema": {"alpha": 0.9},
    "training": {"epochs": 1, "batch_size": 4},
    "seeds": [0, 1, 2],
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_defaults_validate():
    c = validate({})
    assert c.ema.alpha == 0.999 and c.dropout.pi_h == 0.5 and c.sparsity.ratios == [0.9, 0.8]


def test_unknown_keys_rejected_itemized():
    with pytest.raises(ConfigError) as info:
        validate({"ema": {"alpha": 2.0, "beta": 1}, "bogus": 1})
    text = str(info.value)
    assert len(info.value.problems) == 3
    assert "ema.alpha" in text and "ema.beta" in text and "bogus" in text


def test_ratio_count_must_match_blocks():
    with pytest.raises(ConfigError, match="ratios"):
        validate({"sparsity": {"ratios": [0.5]}})


def test_idx_kind_needs_paths():
    with pytest.raises(ConfigError, match="train_images"):
        validate({"dataset": {"kind": "idx"}})


def test_override_changes_exactly_one_key(config_file):
    base = load_config(config_file).model_dump()
    changed = load_config(config_file, ["gamma=0"]).model_dump()
    diffs = [(s, k) for s in base if isinstance(base[s], dict) for k in base[s] if base[s][k] != changed[s][k]]
    assert diffs == [("ema", "gamma")] and changed["ema"]["gamma"] == 0


def test_scalar_k_override_sets_last_block():
    assert apply_overrides({}, ["k=0.5"])["sparsity"]["ratios"] == [0.9, 0.5]


def test_bad_override_format():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["gamma"])


def test_run_writes_self_describing_artifacts(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["-q", "run", "--config", str(config_file), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "class_il\t" in printed and "±" in printed
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1, 2] and manifest["engine_version"]
    assert yaml.safe_load((out / "config.yaml").read_text())["ema"]["alpha"] == 0.9
    summary = json.loads((out / "summary.json").read_text())
    vals = summary["class_il"]["values"]
    assert summary["class_il"]["mean"] == pytest.approx(np.mean(vals))
    assert summary["class_il"]["std"] == pytest.approx(np.std(vals))
    seed_dir = out / "seed_1"
    for name in ("accuracy_long_term_class_il.csv", "summary.json", "metrics.tsv", "events.jsonl",
                 "activity.json", "checkpoint.npz", "streams.json"):
        assert (seed_dir / name).exists(), name
    tensors = load_tensors(seed_dir / "checkpoint.npz")
    assert any(k.startswith("long_term.") for k in tensors) and "buffer.inputs" in tensors
    header = (out / "metrics.tsv").read_text().splitlines()[0]
    assert header == "method\tseed\ttask\tmetric\tvalue"


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_identical_invocations_identical_artifacts(config_file, tmp_path):
    args = ["-q", "run", "--config", str(config_file), "--seed", "0", "--out", str(tmp_path / "a")]
    cli.main(args)
    a = _tree(tmp_path / "a")
    cli.main(args)
    b = _tree(tmp_path / "a")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_alias_flag_override(config_file, tmp_path):
    out = tmp_path / "g"
    assert cli.main(["-q", "run", "--config", str(config_file), "--seed", "0", "--gamma", "0", "--out", str(out)]) == 0
    assert yaml.safe_load((out / "config.yaml").read_text())["ema"]["gamma"] == 0


def test_invalid_config_exit_code_and_message(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("ema:\n  alpha: 3\n  wat: 1\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "ema.alpha" in err and "ema.wat" in err


def test_missing_dataset_names_path(tmp_path, capsys):
    cfg = tmp_path / "idx.yaml"
    cfg.write_text(yaml.safe_dump({"dataset": {"kind": "idx", "train_images": "nowhere/train-img.idx",
                                               "train_labels": "a", "test_images": "b", "test_labels": "c"}}))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "train-img.idx" in capsys.readouterr().err


def test_unknown_flag_rejected(config_file, capsys):
    assert cli.main(["run", "--config", str(config_file), "--zeta", "1"]) == 2


def test_ablate_rows_and_er_equivalence(config_file, tmp_path):
    out = tmp_path / "abl"
    assert cli.main(["-q", "ablate", "--config", str(config_file), "--seed", "0", "--out", str(out)]) == 0
    rows = (out / "ablation.tsv").read_text().splitlines()
    assert len(rows) == 6
    flags = [tuple(int(x) for x in r.split("\t")[1:4]) for r in rows[1:]]
    assert flags == [(1, 1, 1), (1, 1, 0), (0, 1, 0), (1, 0, 0), (0, 0, 0)]
    assert [float(r.split("\t")[-1]) for r in rows[1:]] == [a[-1] for a in ABLATIONS]
    assert "paper, full scale - not a target" in (out / "ablation.md").read_text()

    er = tmp_path / "er"
    cli.main(["-q", "run", "--config", str(config_file), "--seed", "0", "--method", "er", "--out", str(er)])
    a = load_tensors(out / "er" / "seed_0" / "checkpoint.npz")
    b = load_tensors(er / "seed_0" / "checkpoint.npz")
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_export_long_term_weights(config_file, tmp_path):
    out = tmp_path / "r"
    cli.main(["-q", "run", "--config", str(config_file), "--seed", "0", "--out", str(out)])
    target = tmp_path / "lt.npz"
    assert cli.main(["export", str(out / "seed_0"), "--what", "long_term", "--out", str(target)]) == 0
    assert set(load_tensors(target)) == {k[len("long_term."):] for k in load_tensors(out / "seed_0" / "checkpoint.npz")
                                         if k.startswith("long_term.")}
    assert cli.main(["export", str(out / "seed_0"), "--what", "activity", "--out", str(tmp_path / "a.npz")]) == 0
    assert cli.main(["export", str(tmp_path), "--what", "working", "--out", str(target)]) == 3


def test_verify_clean_tree(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    for ident, _ in verify.CHECKS:
        assert ident in out


def test_verify_catches_sign_flip_in_semantic_retention():
    def flipped(counts, pi_s):
        counts = np.asarray(counts, dtype=np.float64)
        top = counts.max(axis=1, keepdims=True)
        safe = np.where(top > 0, top, 1.0)
        return np.where(top > 0, 1.0 - np.exp(+(counts / safe) * pi_s), 0.0)

    outcomes = {o.ident: o for o in verify.run_checks({"update_semantic": flipped})}
    assert not outcomes["formula.semantic_retention"].ok
    assert all(o.ok for ident, o in outcomes.items() if ident != "formula.semantic_retention")


def test_verify_catches_biased_reservoir():
    from scommer.memory import EpisodicMemory

    class AlwaysReplace(EpisodicMemory):
        # overwrites a random slot for every item, so recent items dominate
        def insert(self, x, label, task, rng):
            self.seen += 1
            slot = self.seen - 1 if self.seen <= self.capacity else int(rng.integers(0, self.capacity))
            self.inputs[slot], self.labels[slot], self.tasks[slot] = x, label, task

    outcomes = {o.ident: o for o in verify.run_checks({"EpisodicMemory": AlwaysReplace})}
    assert not outcomes["reservoir.uniform_inclusion"].ok
