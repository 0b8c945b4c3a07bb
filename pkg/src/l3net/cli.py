"""Command line entry point ``l3``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datasets import (LabeledGraphSignalSet, NoiseSpec, downsample, find_mnist_files, gen_updown,
                       images_to_set, load_mnist_idx, noisy_copy, psnr)
from .graph import build_graph
from .training import Checkpoint, ExperimentConfig, SweepSpec, evaluate, load_data, run_table, train
from .verify import SUITES, run_suite


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_graph_build(args):
    g = build_graph(args.kind, n=args.n, h=args.h, w=args.w)
    text = g.to_text()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {g.n} nodes, {len(g.edges)} edges to {args.out} (sha256 {g.content_hash()[:16]})")
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args):
    report = run_suite(args.suite, args.trials, args.seed)
    _emit(report, args.out)
    return 0 if report["passed"] else 1


def cmd_gen_updown(args):
    train_set, test_set = gen_updown(args.graph, args.n, args.n_train, args.n_test, args.threshold, args.std,
                                     args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in (train_set, test_set):
        s.save(out / f"{s.split}.npz")
    _emit({"out": str(out), "train": len(train_set), "test": len(test_set),
           "train_class_counts": np.bincount(train_set.labels, minlength=2).tolist(),
           "cache_key": train_set.cache_key()})
    return 0


def cmd_prep_mnist(args):
    spec = None
    if args.noise != "none":
        spec = NoiseSpec(args.noise, std=args.std, noise_level=args.noise_level, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    info = {"out": str(out)}
    for offset, split in enumerate(("train", "test")):
        img, lab = load_mnist_idx(*find_mnist_files(args.mnist_dir, split))
        if args.factor > 1:
            img = downsample(img, args.factor)
        clean = images_to_set(img, lab, split, {"generator": "mnist", "factor": args.factor, "split": split,
                                                "noise": None})
        data = noisy_copy(clean, spec, offset)
        data.save(out / f"{split}.npz")
        info[split] = {"size": len(data), "psnr": psnr(clean.signals, data.signals) if spec else None}
    _emit(info)
    return 0


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.reg_lambda is not None:
        changes["reg_lambda"] = args.reg_lambda
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args):
    cfg = _load_config(args)
    resume = Checkpoint.load(args.resume) if args.resume else None
    out = args.out or f"runs/{cfg.name}-{cfg.config_hash()}"
    res = train(cfg, out, resume=resume)
    _emit({**res.summary(), "out": out})
    return 0


def cmd_eval(args):
    ckpt = Checkpoint.load(args.checkpoint)
    if args.data in ("test", "eval", "train"):
        data = load_data(ckpt.config)
        target = getattr(data, args.data)
    else:
        target = LabeledGraphSignalSet.load(args.data)
    if target.graph.content_hash() != ckpt.graph_hash:
        raise SystemExit("data graph does not match the checkpoint graph")
    clf = ckpt.config.estimator(target.graph).restore(ckpt.state, target.signals.shape[2])
    acc, loss = evaluate(clf, target)
    _emit({"checkpoint": str(args.checkpoint), "epoch": ckpt.epoch, "accuracy": acc, "loss": loss,
           "n": len(target)})
    return 0


def cmd_sweep(args):
    spec = SweepSpec.from_text(Path(args.spec).read_text(encoding="utf-8"))
    rows = run_table(spec.configs(), spec.seeds, args.out)
    _emit({"rows": [{k: r[k] for k in ("name", "params", "acc_mean", "acc_std", "n_seeds")} for r in rows]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l3", description="Graph convolutions with learnable low-rank local filters")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="graph utilities")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    gb = gsub.add_parser("build", help="build a ring, chain or grid graph")
    gb.add_argument("--kind", choices=("ring", "chain", "grid"), required=True)
    gb.add_argument("--n", type=int)
    gb.add_argument("--h", type=int)
    gb.add_argument("--w", type=int)
    gb.add_argument("--out")
    gb.set_defaults(func=cmd_graph_build)

    v = sub.add_parser("verify", help="run a numerical verification suite")
    v.add_argument("--suite", choices=SUITES, required=True)
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    u = sub.add_parser("gen-updown", help="generate the up/down-wind dataset")
    u.add_argument("--graph", choices=("ring", "chain"), default="ring")
    u.add_argument("--n", type=int, default=64)
    u.add_argument("--n-train", type=int, default=5000)
    u.add_argument("--n-test", type=int, default=5000)
    u.add_argument("--threshold", type=float, default=0.1)
    u.add_argument("--std", type=float, default=1.5)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", default="data/updown")
    u.set_defaults(func=cmd_gen_updown)

    m = sub.add_parser("prep-mnist", help="downsample MNIST onto a grid graph and add noise")
    m.add_argument("--mnist-dir", required=True)
    m.add_argument("--factor", type=int, choices=(1, 2, 4), default=4)
    m.add_argument("--noise", choices=("none", "gaussian", "missing", "permutation"), default="none")
    m.add_argument("--std", type=float)
    m.add_argument("--noise-level", type=float)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default="data/mnist")
    m.set_defaults(func=cmd_prep_mnist)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--reg-lambda", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default="test", help="saved signal set (.npz) or train/eval/test of the config")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a config grid over seeds")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", default="runs/sweep")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, ArithmeticError) as exc:
        print(f"l3: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
