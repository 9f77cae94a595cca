"""Command-line entry point: ``scommer {run,ablate,verify,export}``."""

import argparse
import logging
import sys
from pathlib import Path

from . import report
from .config import ALIASES, load_config
from .dropout import ActivityState
from .errors import ConfigError, DatasetError, MissingCacheError, NonFiniteError, ShapeError
from .tensor_net import load_tensors, save_tensors
from .trainer import load_dataset, run_experiment


log = logging.getLogger("scommer")


FAULTS = (ConfigError, DatasetError, ShapeError, NonFiniteError, MissingCacheError)


def _add_common(p):
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); default from config")
    p.add_argument("--out", help="artifact directory (default: output.dir from config)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set one config key, e.g. ema.gamma=0 or gamma=0 (repeatable)")
    p.add_argument("--method", choices=["scommer", "er", "sgd", "joint"])


def build_parser():
    parser = argparse.ArgumentParser(prog="scommer", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="train one method over the task stream for each seed"))
    _add_common(sub.add_parser("ablate", help="run the five component ablations"))
    sub.add_parser("verify", help="run the fast invariant suite")
    ex = sub.add_parser("export", help="extract one artifact from a finished seed directory")
    ex.add_argument("run_dir", help="a per-seed directory written by 'run'")
    ex.add_argument("--what", choices=["long_term", "working", "buffer", "activity"], required=True)
    ex.add_argument("--out", required=True)
    return parser


def _alias_flags(extra):
    """Turn leftover ``--gamma 0`` style flags into overrides."""
    overrides, i = [], 0
    while i < len(extra):
        flag = extra[i]
        name = flag[2:] if flag.startswith("--") else None
        if name and "=" in name:
            name, value = name.split("=", 1)
            i += 1
        elif name and i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError(f"unrecognized argument {flag!r}")
        if name not in ALIASES:
            raise ConfigError(f"unrecognized option --{name}; known shorthands: {', '.join(sorted(ALIASES))}")
        overrides.append(f"{name}={value}")
    return overrides


def _load(args, extra):
    overrides = list(args.override) + _alias_flags(extra)
    if args.method:
        overrides.append(f"method={args.method}")
    cfg = load_config(args.config, overrides)
    if args.out:
        cfg.output.dir = args.out
    seeds = args.seed or cfg.seeds
    return cfg, seeds


def _run_seeds(cfg, seeds, out, dataset):
    results = []
    for seed in seeds:
        log.info("method=%s seed=%d", cfg.method, seed)
        res = run_experiment(cfg, seed, dataset)
        report.write_run(res, cfg, out / f"seed_{seed}", dataset)
        results.append(res)
    return results


def cmd_run(args, extra):
    cfg, seeds = _load(args, extra)
    dataset = load_dataset(cfg)
    out = Path(cfg.output.dir)
    unused = report.UNUSED_SECTIONS[cfg.method]
    if unused:
        log.info("method %s does not use config sections: %s", cfg.method, ", ".join(unused))
    results = _run_seeds(cfg, seeds, out, dataset)
    stats = report.write_summary(results, cfg, out, cfg.dump())
    for name, st in stats.items():
        print(f"{cfg.method}\t{name}\t{report.fmt_pm(st, 1.0 if name == 'recency_std' else 100.0)}")
    return 0


def cmd_ablate(args, extra):
    cfg, seeds = _load(args, extra)
    dataset = load_dataset(cfg)
    out = Path(cfg.output.dir)
    table = []
    for name, sparse, long_term, dropout, reference in report.ABLATIONS:
        sub = report.ablation_config(cfg, sparse, long_term, dropout)
        results = _run_seeds(sub, seeds, out / name, dataset)
        stats = report.write_summary(results, sub, out / name, sub.dump())
        table.append((name, (sparse, long_term, dropout, reference), stats))
        print(f"{name}\tclass_il\t{report.fmt_pm(stats['class_il'])}\t(paper, full scale - not a target: {reference})")
    report.write_ablation(table, out)
    return 0


def cmd_verify(args, extra):
    from .verify import run_checks
    if extra:
        raise ConfigError(f"verify takes no options, got {extra}")
    outcomes = run_checks()
    for oc in outcomes:
        line = f"{'PASS' if oc.ok else 'FAIL'}  {oc.ident}  ({oc.seconds:.2f}s)"
        print(line if oc.ok else f"{line}: {oc.message}")
    failed = [oc.ident for oc in outcomes if not oc.ok]
    if failed:
        print(f"violated: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(outcomes)} invariants hold")
    return 0


def cmd_export(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    run_dir = Path(args.run_dir)
    if args.what == "activity":
        src = run_dir / "activity.json"
        if not src.exists():
            raise DatasetError(f"no activity counters in {src}")
        state = ActivityState.load(src)
        data = {f"layer{i}.{k}": v for i, layer in state.layers.items()
                for k, v in (("global_counts", layer.global_counts), ("class_counts", layer.class_counts),
                             ("p_hetero", layer.p_hetero), ("p_semantic", layer.p_semantic))}
        save_tensors(args.out, data)
        return 0
    src = run_dir / "checkpoint.npz"
    if not src.exists():
        raise DatasetError(f"checkpoint not found: {src}")
    tensors = load_tensors(src)
    prefix = {"long_term": "long_term.", "working": "working.", "buffer": "buffer."}[args.what]
    picked = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    if not picked:
        raise DatasetError(f"{src} holds no '{args.what}' tensors")
    save_tensors(args.out, picked)
    return 0


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "verify": cmd_verify, "export": cmd_export}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, extra)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FAULTS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
