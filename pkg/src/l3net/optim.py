"""Adam and SGD steps plus step-decay and plateau learning-rate schedules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are not modified."""
    b1, b2 = betas
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


@dataclass
class SGDState:
    t: int = 0


def sgd_step(params, grads, state: SGDState, lr: float):
    return [p - lr * g for p, g in zip(params, grads)], SGDState(state.t + 1)


class Optimizer:
    """Applies a functional step to tensors' values in place of the old arrays."""

    def __init__(self, params, kind: str = "adam", lr: float = 1e-3):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params, self.kind, self.lr = list(params), kind, lr
        self.state = AdamState() if kind == "adam" else SGDState()

    def step(self):
        vals = [p.value for p in self.params]
        grads = [np.zeros_like(p.value) if p.grad is None else p.grad for p in self.params]
        if self.kind == "adam":
            new, self.state = adam_step(vals, grads, self.state, self.lr)
        else:
            new, self.state = sgd_step(vals, grads, self.state, self.lr)
        for p, v in zip(self.params, new):
            p.value = v

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict:
        out = {"t": self.state.t}
        if self.kind == "adam":
            out["m"], out["v"] = list(self.state.m), list(self.state.v)
        return out

    def load_state_arrays(self, state: dict):
        if self.kind == "adam":
            self.state = AdamState(int(state["t"]), [np.array(a) for a in state.get("m", [])],
                                   [np.array(a) for a in state.get("v", [])])
        else:
            self.state = SGDState(int(state["t"]))


class StepSchedule:
    """``lr0 * factor ** (number of milestones <= epoch)`` with 0-based epochs."""

    def __init__(self, lr0: float, milestones=(), factor: float = 0.1):
        self.lr0, self.milestones, self.factor = lr0, tuple(milestones), factor

    def lr(self, epoch: int) -> float:
        return self.lr0 * self.factor ** sum(epoch >= m for m in self.milestones)

    def observe(self, metric: float):
        pass

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        pass


class PlateauSchedule:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a new minimum (by ``min_delta``)."""

    def __init__(self, lr0: float, patience: int = 15, factor: float = 0.1, min_delta: float = 1e-4):
        self.current, self.patience, self.factor, self.min_delta = lr0, patience, factor, min_delta
        self.best, self.bad = np.inf, 0

    def lr(self, epoch: int) -> float:
        return self.current

    def observe(self, metric: float):
        if metric < self.best - self.min_delta:
            self.best, self.bad = metric, 0
            return
        self.bad += 1
        if self.bad >= self.patience:
            self.current *= self.factor
            self.bad = 0

    def state(self) -> dict:
        return {"current": self.current, "best": self.best, "bad": self.bad}

    def load_state(self, state: dict):
        self.current, self.best, self.bad = float(state["current"]), float(state["best"]), int(state["bad"])


def make_schedule(kind: str, lr0: float, milestones=(), factor: float = 0.1, patience: int = 15,
                  min_delta: float = 1e-4):
    if kind == "step":
        return StepSchedule(lr0, milestones, factor)
    if kind == "plateau":
        return PlateauSchedule(lr0, patience, factor, min_delta)
    if kind == "none":
        return StepSchedule(lr0)
    raise ValueError(f"unknown schedule {kind!r}")
