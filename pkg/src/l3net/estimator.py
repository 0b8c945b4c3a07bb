"""scikit-learn style classifier over graph signals."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .errors import NumericError, ShapeError, StructuralError
from .graph import Graph
from .models import GraphNet
from .optim import Optimizer, make_schedule
from .regularization import objective

log = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    """Non-finite loss; ``state`` holds the last finite training state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def check_signals(X, n_nodes: int | None = None, n_channels: int | None = None) -> np.ndarray:
    """Validate a batch of node signals and return it as float64 ``(B, n, C)``.

    2-D input is read as single-channel ``(B, n)``.
    """
    X = check_array(X, allow_nd=True, ensure_2d=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ShapeError(f"signals must be (batch, nodes) or (batch, nodes, channels), got {X.shape}")
    if n_nodes is not None and X.shape[1] != n_nodes:
        raise StructuralError(f"signals have {X.shape[1]} nodes, the graph has {n_nodes}")
    if n_channels is not None and X.shape[2] != n_channels:
        raise ShapeError(f"signals have {X.shape[2]} channels, the model expects {n_channels}")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ShapeError(f"expected {n_samples} labels, got shape {y.shape}")
    return y


@dataclass
class FitState:
    """Everything needed to continue training bit-identically."""

    epoch: int
    params: list
    buffers: list
    optimizer: dict
    schedule: dict
    rng_state: dict
    history: list = field(default_factory=list)
    best: dict = field(default_factory=dict)


class GraphConvClassifier(ClassifierMixin, BaseEstimator):
    """Graph-convolution network classifier trained with mini-batch Adam/SGD.

    Parameters
    ----------
    graph : Graph
        Graph shared by every input signal.
    arch : {"updown2", "updown1", "mnist2"}
    layer : {"l3net", "cheb", "gcn", "gat", "edgenet"}
    orders : tuple of int
        Neighborhood orders of the L3Net basis filters.
    reg_lambda : float
        Weight of the local Laplacian penalty on L3Net basis filters.
    schedule : {"step", "plateau", "none"}
        Step decay at ``milestones`` or decay after ``patience`` epochs without
        improvement of the evaluation loss.
    random_state : int
        Seeds parameter initialization and batch shuffling.
    """

    def __init__(self, graph: Graph | None = None, arch: str = "updown2", layer: str = "l3net", orders=(1,),
                 cheb_L: int = 5, heads: int = 1, edgenet_L: int = 2, shared_basis: bool = False,
                 optimizer: str = "adam", lr: float = 1e-3, batch_size: int = 100, epochs: int = 100,
                 schedule: str = "step", milestones=(80,), lr_factor: float = 0.1, patience: int = 15,
                 min_delta: float = 1e-4, reg_lambda: float = 0.0, n_classes: int | None = None,
                 random_state: int = 0, verbose: int = 0):
        self.graph = graph
        self.arch = arch
        self.layer = layer
        self.orders = orders
        self.cheb_L = cheb_L
        self.heads = heads
        self.edgenet_L = edgenet_L
        self.shared_basis = shared_basis
        self.optimizer = optimizer
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.schedule = schedule
        self.milestones = milestones
        self.lr_factor = lr_factor
        self.patience = patience
        self.min_delta = min_delta
        self.reg_lambda = reg_lambda
        self.n_classes = n_classes
        self.random_state = random_state
        self.verbose = verbose

    # -- setup ---------------------------------------------------------------
    def _init_model(self, n_channels: int):
        if self.graph is None:
            raise ValueError("a graph must be supplied")
        if self.reg_lambda < 0:
            raise ValueError(f"reg_lambda must be non-negative, got {self.reg_lambda}")
        init_ss, shuffle_ss = np.random.SeedSequence(self.random_state).spawn(2)
        self.model_ = GraphNet(self.arch, self.graph, self.layer, n_channels, len(self.classes_),
                               np.random.default_rng(init_ss), orders=tuple(self.orders), cheb_L=self.cheb_L,
                               heads=self.heads, edgenet_L=self.edgenet_L, shared_basis=self.shared_basis)
        self._rng = np.random.default_rng(shuffle_ss)
        self._opt = Optimizer(self.model_.parameters(), self.optimizer, self.lr)
        self._sched = make_schedule(self.schedule, self.lr, self.milestones, self.lr_factor, self.patience,
                                    self.min_delta)
        self._reg = self.model_.reg_contexts(self.reg_lambda)
        self.epoch_ = 0
        self.history_ = []
        self.best_ = {}
        self.n_features_in_ = n_channels

    def _encode(self, y) -> np.ndarray:
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("labels outside the classes seen at fit time")
        return idx

    # -- state ---------------------------------------------------------------
    def get_state(self) -> FitState:
        check_is_fitted(self, "model_")
        return FitState(self.epoch_, [p.value.copy() for p in self.model_.parameters()],
                        [b.copy() for b in self.model_.buffers()], copy.deepcopy(self._opt.state_arrays()),
                        dict(self._sched.state()), copy.deepcopy(self._rng.bit_generator.state),
                        copy.deepcopy(self.history_), copy.deepcopy(self.best_))

    def set_state(self, state: FitState):
        params, buffers = self.model_.parameters(), self.model_.buffers()
        if len(state.params) != len(params) or len(state.buffers) != len(buffers):
            raise StructuralError("state does not match the model layout")
        for p, v in zip(params, state.params):
            if p.value.shape != np.shape(v):
                raise StructuralError(f"parameter shape {np.shape(v)} does not match {p.value.shape}")
            p.value = np.array(v, dtype=np.float64)
        for b, v in zip(buffers, state.buffers):
            b[...] = v
        self._opt.load_state_arrays(state.optimizer)
        self._sched.load_state(state.schedule)
        self._rng.bit_generator.state = copy.deepcopy(state.rng_state)
        self.epoch_ = int(state.epoch)
        self.history_ = copy.deepcopy(state.history)
        self.best_ = copy.deepcopy(state.best)

    def restore(self, state: FitState, n_channels: int = 1, classes=None):
        """Rebuild a fitted model from a saved state without training."""
        if classes is not None:
            self.classes_ = np.asarray(classes)
        elif self.n_classes is not None:
            self.classes_ = np.arange(self.n_classes)
        else:
            raise ValueError("classes are needed to restore an estimator")
        self._init_model(n_channels)
        self.set_state(state)
        return self

    # -- training ------------------------------------------------------------
    def _loss(self, X, y, training: bool):
        logits = self.model_(X, training)
        loss = ad.softmax_cross_entropy(logits, y)
        return logits, loss

    def _eval(self, X, y):
        """Mean loss and accuracy in inference mode."""
        if X is None:
            return float("nan"), float("nan")
        total, correct = 0.0, 0
        step = max(self.batch_size, 500)
        for s in range(0, len(X), step):
            logits, loss = self._loss(X[s:s + step], y[s:s + step], False)
            total += loss.item() * len(logits.value)
            correct += int(np.sum(logits.value.argmax(axis=1) == y[s:s + step]))
        return total / len(X), correct / len(X)

    def _record(self, row: dict):
        self.history_.append(row)
        if self.verbose:
            log.info("epoch %d loss %.4f acc %.4f eval %.4f", row["epoch"], row["train_loss"], row["train_acc"],
                     row["eval_acc"])

    def fit(self, X, y, eval_set=None, resume: FitState | None = None):
        """Train for ``epochs`` epochs (in total, counting epochs restored from ``resume``).

        ``eval_set`` is an ``(X, y)`` pair scored after every epoch; the
        parameters with the best evaluation accuracy are kept in ``best_``.
        """
        X = check_signals(X, None if self.graph is None else self.graph.n)
        y = check_labels(y, X.shape[0])
        if self.n_classes is not None:
            self.classes_ = np.arange(self.n_classes)
        else:
            self.classes_ = np.unique(y if eval_set is None else np.concatenate([y, eval_set[1]]))
        yi = self._encode(y)
        Xe = ye = None
        if eval_set is not None:
            Xe = check_signals(eval_set[0], X.shape[1], X.shape[2])
            ye = self._encode(check_labels(eval_set[1], Xe.shape[0]))
        self._init_model(X.shape[2])
        if resume is not None:
            self.set_state(resume)
        else:
            loss, acc = self._eval(X, yi)
            eloss, eacc = self._eval(Xe, ye)
            self._record({"epoch": 0, "train_loss": loss, "train_acc": acc, "eval_loss": eloss, "eval_acc": eacc,
                          "reg_value": self.model_.reg_value(), "lr": self._sched.lr(0)})
            self._update_best(eacc)
        while self.epoch_ < self.epochs:
            self._run_epoch(X, yi, Xe, ye)
        return self

    def _update_best(self, eacc):
        if not self.best_ or (np.isfinite(eacc) and eacc > self.best_["eval_acc"]):
            self.best_ = {"epoch": self.epoch_, "eval_acc": eacc,
                          "params": [p.value.copy() for p in self.model_.parameters()],
                          "buffers": [b.copy() for b in self.model_.buffers()]}

    def _run_epoch(self, X, y, Xe, ye):
        snapshot = self.get_state()
        lr = self._sched.lr(self.epoch_)
        self._opt.lr = lr
        perm = self._rng.permutation(len(X))
        total, correct = 0.0, 0
        for s in range(0, len(X), self.batch_size):
            b = perm[s:s + self.batch_size]
            self._opt.zero_grad()
            logits, loss = self._loss(X[b], y[b], True)
            obj = objective(loss, self.model_.banks(), self._reg)
            if not np.isfinite(obj.item()):
                self.set_state(snapshot)
                raise TrainingDiverged(f"non-finite objective in epoch {self.epoch_ + 1}", snapshot)
            obj.backward()
            self._opt.step()
            total += loss.item() * len(b)
            correct += int(np.sum(logits.value.argmax(axis=1) == y[b]))
        self.epoch_ += 1
        eloss, eacc = self._eval(Xe, ye)
        self._sched.observe(eloss if Xe is not None else total / len(X))
        self._record({"epoch": self.epoch_, "train_loss": total / len(X), "train_acc": correct / len(X),
                      "eval_loss": eloss, "eval_acc": eacc, "reg_value": self.model_.reg_value(), "lr": lr})
        self._update_best(eacc)

    # -- inference -----------------------------------------------------------
    def use_best(self):
        """Load the parameters that scored best on the evaluation set."""
        check_is_fitted(self, "model_")
        for p, v in zip(self.model_.parameters(), self.best_["params"]):
            p.value = v.copy()
        for b, v in zip(self.model_.buffers(), self.best_["buffers"]):
            b[...] = v
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_signals(X, self.graph.n, self.n_features_in_)
        step = max(self.batch_size, 500)
        return np.concatenate([self.model_(X[s:s + step], False).value for s in range(0, len(X), step)]) \
            if len(X) else np.zeros((0, len(self.classes_)))

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(ad.log_softmax(self.decision_function(X)))

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]
