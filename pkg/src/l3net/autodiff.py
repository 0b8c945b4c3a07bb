"""Dense float64 tensors with reverse-mode gradient accumulation.

Every primitive returns a new :class:`Tensor` that remembers its parents and a
closure computing the adjoint contribution to each of them. ``backward`` walks
the recorded nodes in reverse topological order (the tape) and accumulates
``grad`` on every node that requires it.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.value.size != 1:
                raise ShapeError(f"backward without seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=DTYPE, copy=True), requires_grad=True)


def _node(value, parents, backward, op) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, parents=parents if req else (),
                  backward=backward if req else None, op=op)


def custom_op(value, parents: Sequence[Tensor], grads: Callable[[np.ndarray], Sequence[np.ndarray | None]],
              op: str = "custom") -> Tensor:
    """Wrap a value with a hand-written adjoint.

    ``grads(g)`` returns one array (or ``None``) per parent.
    """
    parents = tuple(parents)

    def backward(g):
        for p, gp in zip(parents, grads(g)):
            if gp is not None and p.requires_grad:
                p._accumulate(gp)

    return _node(value, parents, backward, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return custom_op(a.value + b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return custom_op(a.value - b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return custom_op(a.value * b.value, (a, b),
                     lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                     "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return custom_op(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(x) -> Tensor:
    x = as_tensor(x)
    m = x.value > 0
    return custom_op(np.where(m, x.value, 0.0), (x,), lambda g: (g * m,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    m = x.value > 0
    return custom_op(np.where(m, x.value, slope * x.value), (x,),
                     lambda g: (np.where(m, g, slope * g),), "leaky_relu")


def identity(x) -> Tensor:
    return as_tensor(x)


ACTIVATIONS = {"relu": relu, "identity": identity, "id": identity, None: identity}


def activation(name) -> Callable[[Tensor], Tensor]:
    if callable(name):
        return name
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


# -- shape ops ---------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return custom_op(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return custom_op(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def flatten(x) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return custom_op(np.concatenate([x.value for x in xs], axis=axis), xs,
                     lambda g: np.split(g, sizes, axis=axis), "concat")


def index0(x, i: int) -> Tensor:
    """``x[i]`` along the leading axis."""
    x = as_tensor(x)

    def grads(g):
        out = np.zeros_like(x.value)
        out[i] = g
        return (out,)

    return custom_op(x.value[i], (x,), grads, "index0")


def take(x, index: np.ndarray) -> Tensor:
    """``x.value[index]`` for a 1-D ``x``; adjoint sums repeated picks."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"take expects a 1-D tensor, got shape {x.shape}")
    index = np.asarray(index)

    def grads(g):
        return (np.bincount(index.ravel(), weights=g.ravel(), minlength=x.shape[0]),)

    return custom_op(x.value[index], (x,), grads, "take")


# -- contractions --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def grads(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.value)
            gb = np.tensordot(a.value, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        ga = g @ np.swapaxes(b.value, -1, -2)
        if b.ndim == 2:
            gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return custom_op(a.value @ b.value, (a, b), grads, "matmul")


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable ``numpy.einsum`` (explicit ``->`` form, no repeated labels per operand)."""
    ops = [as_tensor(o) for o in operands]
    ins, out = subscripts.replace(" ", "").split("->")
    ins = ins.split(",")
    if len(ins) != len(ops):
        raise ShapeError(f"einsum {subscripts!r} got {len(ops)} operands")
    sizes = {}
    for s, o in zip(ins, ops):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise ShapeError(f"einsum term {s!r} does not fit operand shape {o.shape}")
        for c, n in zip(s, o.shape):
            if sizes.setdefault(c, n) != n:
                raise ShapeError(f"einsum {subscripts!r}: label {c!r} has sizes {sizes[c]} and {n}")
    value = np.einsum(subscripts, *[o.value for o in ops], optimize=True)

    def grads(g):
        res = []
        for i, (s, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                res.append(None)
                continue
            others = [(ins[j], ops[j].value) for j in range(len(ops)) if j != i]
            avail = set(out).union(*[set(t) for t, _ in others])
            kept = "".join(c for c in s if c in avail)
            spec = ",".join([out] + [t for t, _ in others]) + "->" + kept
            r = np.einsum(spec, g, *[v for _, v in others], optimize=True)
            if kept != s:
                r = np.broadcast_to(np.expand_dims(r, [k for k, c in enumerate(s) if c not in avail]), o.shape)
            res.append(r)
        return res

    return custom_op(value, ops, grads, "einsum")


def reduce_sum(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def grads(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return custom_op(x.value.sum(axis=axis), (x,), grads, "reduce_sum")


def sum_squares(x) -> Tensor:
    x = as_tensor(x)
    return custom_op(np.sum(x.value ** 2), (x,), lambda g: (2.0 * g * x.value,), "sum_squares")


# -- graph primitives --------------------------------------------------

def propagate(S: np.ndarray, x) -> Tensor:
    """``S @ x[b]`` for a constant ``(n, n)`` operator and ``(B, n, C)`` signal."""
    x = as_tensor(x)
    S = np.asarray(S, dtype=DTYPE)
    if x.ndim != 3 or S.shape != (x.shape[1], x.shape[1]):
        raise ShapeError(f"propagate: operator {S.shape} vs signal {x.shape}")
    return custom_op(np.matmul(S, x.value), (x,), lambda g: (np.matmul(S.T, g),), "propagate")


def gather_patch(x, idx: np.ndarray) -> Tensor:
    """``(B, n, C) -> (B, m, p, C)`` picking ``x[:, idx[u, j], :]``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"gather_patch expects (batch, nodes, channels), got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ShapeError(f"gather_patch: index range [{idx.min()}, {idx.max()}] outside {x.shape[1]} nodes")
    n = x.shape[1]
    return custom_op(x.value[:, idx, :], (x,), lambda g: (_scatter(g, idx, n),), "gather_patch")


def _scatter_matrix(idx: np.ndarray, n: int) -> sp.csr_matrix:
    cols = np.arange(idx.size)
    return sp.csr_matrix((np.ones(idx.size), (idx.ravel(), cols)), shape=(n, idx.size))


def _scatter(y: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    B, C = y.shape[0], y.shape[-1]
    flat = np.moveaxis(y, 0, -2).reshape(idx.size, B * C)
    out = _scatter_matrix(idx, n) @ flat
    return np.moveaxis(np.asarray(out).reshape(n, B, C), 1, 0)


def scatter_accumulate(y, idx: np.ndarray, n: int) -> Tensor:
    """Adjoint of :func:`gather_patch`: ``out[:, idx[u, j], :] += y[:, u, j, :]``."""
    y = as_tensor(y)
    if y.ndim != 4 or y.shape[1:3] != idx.shape:
        raise ShapeError(f"scatter_accumulate: values {y.shape} do not match index {idx.shape}")
    return custom_op(_scatter(y.value, idx, n), (y,), lambda g: (g[:, idx, :],), "scatter_accumulate")


def neighborhood_softmax(logits, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked slots get 0."""
    logits = as_tensor(logits)
    z = np.where(mask, logits.value, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    s = e / e.sum(axis=-1, keepdims=True)

    def grads(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return custom_op(s, (logits,), grads, "neighborhood_softmax")


def global_mean_pool_nodes(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_mean_pool_nodes expects (batch, nodes, channels), got {x.shape}")
    n = x.shape[1]
    return custom_op(x.value.mean(axis=1), (x,),
                     lambda g: (np.broadcast_to(g[:, None, :] / n, x.shape),), "global_mean_pool")


def stride2_max_pool_nodes(x) -> Tensor:
    """Max over consecutive node pairs ``(0, 1), (2, 3), ...``."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] % 2:
        raise ShapeError(f"stride2_max_pool_nodes needs an even node axis, got {x.shape}")
    B, n, C = x.shape
    pairs = x.value.reshape(B, n // 2, 2, C)
    arg = pairs.argmax(axis=2)

    def grads(g):
        out = np.zeros_like(pairs)
        np.put_along_axis(out, arg[:, :, None, :], g[:, :, None, :], axis=2)
        return (out.reshape(x.shape),)

    return custom_op(pairs.max(axis=2), (x,), grads, "stride2_max_pool")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis but the last.

    In training mode the running statistics are updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}, {beta.shape} vs {C} channels")
    axes = tuple(range(x.ndim - 1))
    if training:
        m = x.value.size // C
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = gamma.value * xhat + beta.value

    def grads(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.value
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=axes) - xhat * (gxhat * xhat).mean(axis=axes))
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return custom_op(out, (x, gamma, beta), grads, "batch_norm")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    B = logits.shape[0]
    lsm = log_softmax(logits.value)
    loss = -lsm[np.arange(B), labels].mean()

    def grads(g):
        p = np.exp(lsm)
        p[np.arange(B), labels] -= 1.0
        return (g * p / B,)

    return custom_op(loss, (logits,), grads, "softmax_cross_entropy")


# -- gradient checking -------------------------------------------------

def _noise_floor(value) -> float:
    """Denominator floor for relative errors.

    Central differences carry rounding noise near ``1e-16 |f| / eps``; gradients
    that are exactly zero (a bias ahead of batch norm) would otherwise read as
    relative error 1.
    """
    return 1e-6 * max(1.0, float(np.abs(value).max(initial=0.0)))


def grad_check(f: Callable[[Tensor], Tensor], theta, eps: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a 1-D parameter tensor to a scalar tensor. ``coords`` limits the
    finite-difference sweep to a subset of coordinates.
    """
    theta = np.array(theta, dtype=DTYPE).ravel()
    t = Tensor(theta.copy(), requires_grad=True)
    out = f(t)
    out.backward()
    analytic = np.zeros_like(theta) if t.grad is None else t.grad
    if not np.all(np.isfinite(analytic)) or not np.isfinite(out.value).all():
        raise NumericError("non-finite value or gradient in grad_check")
    coords = range(theta.size) if coords is None else coords
    floor = _noise_floor(out.value)
    worst = 0.0
    for i in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        fp, fm = float(f(Tensor(tp)).value), float(f(Tensor(tm)).value)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        central = (fp - fm) / (2 * eps)
        err = abs(analytic[i] - central) / max(abs(analytic[i]) + abs(central), floor)
        worst = max(worst, err)
    return worst


def grad_check_params(loss: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """:func:`grad_check` for a closure over existing parameter tensors.

    Parameters are perturbed in place and restored. With ``max_coords`` a random
    subset of at most that many coordinates per parameter is checked.
    """
    for p in params:
        p.zero_grad()
    out = loss()
    out.backward()
    grads = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    floor = _noise_floor(out.value)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss().value)
            flat[i] = orig - eps
            fm = float(loss().value)
            flat[i] = orig
            central = (fp - fm) / (2 * eps)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - central) / max(abs(a) + abs(central), floor))
    for p in params:
        p.zero_grad()
    return worst
