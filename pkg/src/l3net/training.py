"""Experiment configs, training runs, checkpoints and result tables."""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import log_softmax
from .datasets import LabeledGraphSignalSet, NoiseSpec, gen_updown, mnist_sets, noisy_copy
from .errors import StructuralError
from .estimator import FitState, GraphConvClassifier

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "eval_acc", "reg_value")


@dataclass
class ExperimentConfig:
    name: str = "run"
    arch: str = "updown2"
    layer: str = "l3net"
    orders: tuple = (1,)
    cheb_L: int = 5
    heads: int = 1
    edgenet_L: int = 2
    shared_basis: bool = False
    dataset: str = "updown"
    graph: str = "ring"
    n: int = 64
    n_train: int = 5000
    n_test: int = 5000
    threshold: float = 0.1
    bump_std: float = 1.5
    mnist_dir: str = ""
    factor: int = 4
    validation: int = 5000
    noise: str = "none"
    noise_std: float = 0.0
    noise_level: float = 0.0
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 100
    schedule: str = "step"
    milestones: tuple = (80,)
    lr_factor: float = 0.1
    patience: int = 15
    min_delta: float = 1e-4
    epochs: int = 100
    reg_lambda: float = 0.0
    seed: int = 0

    # -- text format ---------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ";".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, getattr(defaults, key), key)
        return cls(**kwargs)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: _coerce(v, getattr(self, k), k) for k, v in changes.items()})

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def noise_spec(self) -> NoiseSpec | None:
        if self.noise == "none":
            return None
        return NoiseSpec(self.noise, std=self.noise_std or None, noise_level=self.noise_level or None,
                         seed=self.seed)

    def estimator(self, graph) -> GraphConvClassifier:
        return GraphConvClassifier(
            graph=graph, arch=self.arch, layer=self.layer, orders=self.orders, cheb_L=self.cheb_L,
            heads=self.heads, edgenet_L=self.edgenet_L, shared_basis=self.shared_basis,
            optimizer=self.optimizer, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            schedule=self.schedule, milestones=self.milestones, lr_factor=self.lr_factor,
            patience=self.patience, min_delta=self.min_delta, reg_lambda=self.reg_lambda,
            n_classes=10 if self.dataset == "mnist" else 2, random_state=self.seed)


def parse_key_values(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(raw, default, key):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else type(default)(raw)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(";") if x.strip())
        return type(default)(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {raw!r} as {type(default).__name__}") from None


# -- data --------------------------------------------------------------------

@dataclass
class ExperimentData:
    train: LabeledGraphSignalSet
    eval: LabeledGraphSignalSet
    test: LabeledGraphSignalSet

    @property
    def has_validation(self) -> bool:
        return self.eval is not self.test


def load_data(config: ExperimentConfig) -> ExperimentData:
    """Datasets for a config; noise hits every split with independent seeds."""
    if config.dataset == "updown":
        train, test = gen_updown(config.graph, config.n, config.n_train, config.n_test, config.threshold,
                                 config.bump_std, config.seed)
        evalset = test
    elif config.dataset == "mnist":
        root = config.mnist_dir or os.environ.get("L3_MNIST_DIR", "")
        if not root:
            raise FileNotFoundError("set mnist_dir (or L3_MNIST_DIR) to the MNIST IDX directory")
        train, evalset, test = mnist_sets(root, config.factor, config.validation)
    else:
        raise ValueError(f"unknown dataset {config.dataset!r}")
    spec = config.noise_spec()
    train = noisy_copy(train, spec, 0)
    test = noisy_copy(test, spec, 1)
    evalset = test if config.dataset == "updown" else noisy_copy(evalset, spec, 2)
    return ExperimentData(train, evalset, test)


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ExperimentConfig
    graph_hash: str
    state: FitState
    extra: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def epoch(self) -> int:
        return self.state.epoch

    def save(self, path) -> Path:
        path = Path(path)
        arrays = {}
        for i, p in enumerate(self.state.params):
            arrays[f"param_{i:03d}"] = np.asarray(p, dtype="<f8")
        for i, b in enumerate(self.state.buffers):
            arrays[f"buffer_{i:03d}"] = np.asarray(b, dtype="<f8")
        opt = dict(self.state.optimizer)
        for key in ("m", "v"):
            for i, a in enumerate(opt.pop(key, [])):
                arrays[f"opt_{key}_{i:03d}"] = np.asarray(a, dtype="<f8")
        best = dict(self.state.best)
        for key in ("params", "buffers"):
            for i, a in enumerate(best.pop(key, [])):
                arrays[f"best_{key}_{i:03d}"] = np.asarray(a, dtype="<f8")
        meta = {"version": CHECKPOINT_VERSION, "config": self.config.to_text(), "config_hash": self.config_hash,
                "graph_hash": self.graph_hash, "epoch": self.state.epoch, "optimizer": opt,
                "schedule": self.state.schedule, "rng_state": self.state.rng_state,
                "history": self.state.history, "best": best, "extra": self.extra}
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise StructuralError(f"unsupported checkpoint version {meta.get('version')}")

            def group(prefix):
                keys = sorted(k for k in z.files if k.startswith(prefix))
                return [z[k].astype(np.float64) for k in keys]

            opt = dict(meta["optimizer"])
            if any(k.startswith("opt_m_") for k in z.files):
                opt["m"], opt["v"] = group("opt_m_"), group("opt_v_")
            best = dict(meta["best"])
            if best:
                best["params"], best["buffers"] = group("best_params_"), group("best_buffers_")
            state = FitState(meta["epoch"], group("param_"), group("buffer_"), opt, meta["schedule"],
                             meta["rng_state"], meta["history"], best)
        config = ExperimentConfig.from_text(meta["config"])
        if config.config_hash() != meta["config_hash"]:
            raise StructuralError("checkpoint config does not match its recorded hash")
        return cls(config, meta["graph_hash"], state, meta.get("extra", {}))


# -- runs ----------------------------------------------------------------------

@dataclass
class RunResult:
    config: ExperimentConfig
    checkpoint: Checkpoint
    history: list
    test_acc: float
    test_loss: float
    num_parameters: int
    seconds: float
    estimator: GraphConvClassifier = field(repr=False, default=None)

    def summary(self) -> dict:
        return {"name": self.config.name, "config_hash": self.config.config_hash(), "seed": self.config.seed,
                "test_acc": self.test_acc, "test_loss": self.test_loss, "num_parameters": self.num_parameters,
                "epochs": self.checkpoint.epoch, "best_epoch": self.checkpoint.state.best.get("epoch"),
                "best_eval_acc": self.checkpoint.state.best.get("eval_acc"), "seconds": self.seconds}


def evaluate(model, data: LabeledGraphSignalSet, batch_size: int = 500) -> tuple[float, float]:
    """Accuracy and mean cross-entropy of a fitted classifier (or any object with ``decision_function``)."""
    logits = model.decision_function(data.signals) if hasattr(model, "decision_function") else \
        np.concatenate([model(data.signals[s:s + batch_size], False).value
                        for s in range(0, len(data), batch_size)])
    lsm = log_softmax(logits)
    labels = data.labels
    if hasattr(model, "classes_"):
        labels = np.searchsorted(model.classes_, labels)
    acc = float(np.mean(logits.argmax(axis=1) == labels)) if len(labels) else float("nan")
    loss = float(-lsm[np.arange(len(labels)), labels].mean()) if len(labels) else float("nan")
    return acc, loss


def train(config: ExperimentConfig, out_dir=None, data: ExperimentData | None = None,
          resume: Checkpoint | None = None) -> RunResult:
    """Fit the configured model; with ``resume`` training continues up to ``config.epochs``."""
    data = data or load_data(config)
    clf = config.estimator(data.train.graph)
    if resume is not None and resume.graph_hash != data.train.graph.content_hash():
        raise StructuralError("checkpoint was written for a different graph")
    start = time.perf_counter()
    clf.fit(data.train.signals, data.train.labels, eval_set=(data.eval.signals, data.eval.labels),
            resume=None if resume is None else resume.state)
    seconds = time.perf_counter() - start
    ckpt = Checkpoint(config, data.train.graph.content_hash(), clf.get_state())
    scorer = clf
    if data.has_validation:
        scorer = _clone_with_best(clf)
    test_acc, test_loss = evaluate(scorer, data.test)
    result = RunResult(config, ckpt, clf.history_, test_acc, test_loss, clf.model_.num_parameters(), seconds, clf)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def _clone_with_best(clf: GraphConvClassifier) -> GraphConvClassifier:
    other = copy.deepcopy(clf)
    return other.use_best() if other.best_ else other


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in result.history:
            w.writerow([row[c] for c in METRIC_COLUMNS])
    (out / "result.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    (out / "config.txt").write_text(result.config.to_text())
    result.checkpoint.save(out / "checkpoint.npz")
    return out


# -- sweeps --------------------------------------------------------------------

@dataclass
class SweepSpec:
    base: dict
    axes: dict
    seeds: tuple = (0, 1, 2)

    @classmethod
    def from_text(cls, text: str) -> "SweepSpec":
        """Key-value text where ``a | b | c`` declares a grid axis and ``seeds`` lists seeds."""
        values = parse_key_values(text)
        seeds = tuple(int(s) for s in values.pop("seeds", "0;1;2").split(";") if s.strip())
        base, axes = {}, {}
        for k, v in values.items():
            if "|" in v:
                axes[k] = [s.strip() for s in v.split("|")]
            else:
                base[k] = v
        return cls(base, axes, seeds)

    def configs(self) -> list[ExperimentConfig]:
        keys = list(self.axes)
        out = []
        for combo in itertools.product(*[self.axes[k] for k in keys]):
            values = {**self.base, **dict(zip(keys, combo))}
            if keys:
                values["name"] = ",".join(f"{k}={v}" for k, v in zip(keys, combo))
            out.append(ExperimentConfig.from_mapping(values))
        return out if self.axes or self.base else []


def run_table(configs, seeds=(0, 1, 2), out_dir=None, runner=train) -> list[dict]:
    """Mean and std of test accuracy per config over ``seeds``; writes results.csv / results.json."""
    rows = []
    for cfg in configs:
        accs, runs = [], []
        for s in seeds:
            c = cfg.replace(seed=s)
            sub = None if out_dir is None else Path(out_dir) / f"{c.config_hash()}"
            res = runner(c, sub)
            accs.append(100.0 * res.test_acc)
            runs.append(res.summary())
        rows.append({"name": cfg.name, "layer": cfg.layer, "orders": ";".join(map(str, cfg.orders)),
                     "graph": cfg.graph, "reg_lambda": cfg.reg_lambda, "params": runs[0]["num_parameters"] if runs else 0,
                     "n_seeds": len(accs), "acc_mean": float(np.mean(accs)) if accs else float("nan"),
                     "acc_std": float(np.std(accs)) if accs else float("nan"), "accs": accs})
    if out_dir is not None:
        write_table(rows, out_dir)
    return rows


def write_table(rows, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["name", "layer", "orders", "graph", "reg_lambda", "params", "n_seeds", "acc_mean", "acc_std"]
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    (out / "results.json").write_text(json.dumps(rows, indent=2) + "\n")
