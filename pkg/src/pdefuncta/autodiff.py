"""Minimal tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  :func:`backward`
walks that record in reverse topological order and accumulates into the
``grad`` buffer of every reachable :class:`Parameter`.

Only first-order derivatives are supported.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Mapping

import numpy as np

try:  # vectorized float64 trig kernels; numpy's libm loop is an order of magnitude slower
    import torch as _torch

    def _sin_kernel(x: np.ndarray) -> np.ndarray:
        return _torch.sin(_torch.from_numpy(np.ascontiguousarray(x))).numpy().reshape(x.shape)

    def _cos_kernel(x: np.ndarray) -> np.ndarray:
        return _torch.cos(_torch.from_numpy(np.ascontiguousarray(x))).numpy().reshape(x.shape)

except ImportError:  # pragma: no cover
    _sin_kernel, _cos_kernel = np.sin, np.cos

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "BackwardError",
    "as_tensor",
    "matmul",
    "sin",
    "cos",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "mean",
    "mse",
    "forward_eval",
    "backward",
    "zero_gradients",
    "frozen",
    "grad_check",
    "backward_calls",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class BackwardError(RuntimeError):
    """Invalid use of :func:`backward`."""


_counters = {"backward": 0}


def backward_calls() -> int:
    """Number of backward passes executed in this process."""
    return _counters["backward"]


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite result in '{op}'")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array participating in reverse-mode differentiation."""

    __array_priority__ = 1000
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    dims = shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        kind = type(self).__name__
        return f"{kind}(shape={self.shape}, op={self._op or 'leaf'})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


class Parameter(Tensor):
    """Trainable leaf with a persistent, zero-initialised gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return self.grad

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(f"cannot assign {value.shape} to parameter '{self.name}' of dims {self.data.shape}")
        self.data = value.copy()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op) -> Tensor:
    _check_finite(data, op)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast dims {list(a.shape)} and {list(b.shape)}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; a python scalar operand is treated as :func:`scale`."""
    if np.isscalar(b) and not isinstance(a, (int, float)):
        return scale(a, float(b))
    if np.isscalar(a):
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul: operands must have at least one axis")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: inner dims differ, {list(a.shape)} @ {list(b.shape)} ({ka} != {kb})")
    out = a.data @ b.data

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return np.multiply.outer(g, bd), _unbroadcast(
                np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim)))), bd.shape
            )
        if ad.ndim == 1:
            return g @ np.swapaxes(bd, -1, -2), np.multiply.outer(ad, g)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(out, (a, b), bw, "matmul")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(_sin_kernel(a.data), (a,), lambda g: (g * _cos_kernel(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(_cos_kernel(a.data), (a,), lambda g: (-g * _sin_kernel(a.data),), "cos")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis), 1.0 / n)


def take(a, index) -> Tensor:
    """Basic (slice/int) indexing."""
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _node(np.array(out), (a,), bw, "take")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view dims {list(a.shape)} as {list(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def mse(pred, truth) -> Tensor:
    """Mean of squared differences."""
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mse: dims {list(pred.shape)} and {list(truth.shape)} differ")
    diff = pred - truth
    return mean(diff * diff)


def forward_eval(graph_inputs: Mapping[str, object], expression: Callable[[dict], Tensor]) -> Tensor:
    """Evaluate ``expression`` on named inputs, recording the tape.

    Plain arrays become constant tensors; Parameters and Tensors pass through.
    """
    inputs = {k: as_tensor(v) for k, v in graph_inputs.items()}
    return expression(inputs)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
    if not isinstance(loss, Tensor):
        raise BackwardError("backward expects a Tensor")
    if loss.size != 1:
        raise BackwardError(f"loss must be scalar, got dims {list(loss.shape)}")
    if loss._consumed:
        raise BackwardError("backward called twice on the same graph; re-evaluate the forward pass")
    _counters["backward"] += 1
    if not loss.requires_grad:
        loss._consumed = not retain_graph
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    loss._consumed = not retain_graph


def zero_gradients(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


@contextmanager
def frozen(params: Iterable[Parameter]):
    """Temporarily stop gradient flow into ``params``."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def grad_check(expression: Callable[[dict], Tensor], point: Mapping[str, np.ndarray], step: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    For each named input the error is ``|g_analytic - g_fd| / (|g_fd| + 1e-12)``
    with vector 2-norms; the maximum over inputs is returned.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = {k: Parameter(k, v) for k, v in point.items()}
    loss = forward_eval(params, expression)
    backward(loss)
    worst = 0.0
    for name, p in params.items():
        base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
        fd = np.zeros_like(p.data)
        flat = base[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = forward_eval(base, expression).item()
            flat[i] = orig - step
            down = forward_eval(base, expression).item()
            flat[i] = orig
            fd.reshape(-1)[i] = (up - down) / (2 * step)
        err = np.linalg.norm(p.grad - fd) / (np.linalg.norm(fd) + 1e-12)
        worst = max(worst, float(err))
    return worst
