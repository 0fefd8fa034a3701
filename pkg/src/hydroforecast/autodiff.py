"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays and record a define-by-run tape through
parent pointers. Calling ``backward`` on a scalar walks the tape in reverse
topological order and accumulates gradients (+=) into every reachable tensor
with ``requires_grad``. Binary elementwise ops require exactly matching shapes
or a scalar operand; anything else must be expanded explicitly with
``expand``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Raised on invalid backward calls (non-scalar loss, empty graph)."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self.op = "leaf"

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, grad={self.requires_grad})"

    # ---- graph construction --------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], vjp, op: str) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
            out.op = op
        return out

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self, seed=None) -> None:
        backward(self, seed=seed)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not _is_scalar(a) and not _is_scalar(b):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match "
                         "(only scalar broadcast is allowed)")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (undo scalar/batch broadcast)."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return grad.sum()
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "add")
    out = a.data + b.data
    return Tensor._make(out, (a, b),
                        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
                        "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "sub")
    out = a.data - b.data
    return Tensor._make(out, (a, b),
                        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
                        "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary(a, b, "mul")
    out = a.data * b.data
    return Tensor._make(out, (a, b),
                        lambda g: (_reduce_to(g * b.data, a.shape),
                                   _reduce_to(g * a.data, b.shape)),
                        "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = (a.data > 0.0).astype(np.float64)
    return Tensor._make(out, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    return Tensor._make(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,), "square")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---- matmul and softmax --------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:  # batch dims not broadcastable
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape}: {e}") from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return Tensor._make(out, (a, b), vjp, "matmul")


def softmax_lastdim(a: Tensor) -> Tensor:
    if a.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim: need last dim >= 1, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor._make(out, (a,), vjp, "softmax")


# ---- reductions ----------------------------------------------------------


def _norm_axes(axes, ndim) -> tuple[int, ...] | None:
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"reduce: axis {ax} invalid for ndim {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes)

    def vjp(g):
        if axes is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = np.expand_dims(g, axes)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return Tensor._make(np.asarray(out, dtype=np.float64), (a,), vjp, "sum")


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    naxes = _norm_axes(axes, a.ndim)
    if naxes is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in naxes]))
    if count == 0:
        raise ShapeError("reduce: mean over an empty axis slice")
    return scale(reduce_sum(a, axes), 1.0 / count)


# ---- structural ----------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._make(out, tensors, vjp, "concat")


def take(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return Tensor._make(np.asarray(out, dtype=np.float64), (a,), vjp, "slice")


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2: need ndim >= 2, got shape {a.shape}")
    return Tensor._make(np.swapaxes(a.data, -1, -2), (a,),
                        lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} (size {a.size}) to {shape}")
    return Tensor._make(a.data.reshape(shape), (a,),
                        lambda g: (g.reshape(a.shape),), "reshape")


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape``; gradient sums back."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}") from None
    return Tensor._make(out.copy(), (a,), lambda g: (_reduce_to(g, a.shape),), "expand")


# ---- backward pass -------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, seed=None) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from ``loss``.

    Accumulates into ``.grad`` of every reachable requires_grad tensor and
    returns the full id -> gradient map. ``seed`` overrides the default
    all-ones seed (the default requires a scalar loss).
    """
    if seed is None:
        if loss.ndim != 0 and loss.size != 1:
            raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
    else:
        seed = _as_array(seed)
        if seed.shape != loss.shape:
            raise GraphError(f"backward: seed shape {seed.shape} != loss shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): seed.astype(np.float64)}
    for node in reversed(_topo(loss)):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = np.array(pg, dtype=np.float64)
    for node in _topo(loss):
        if node.requires_grad and id(node) in grads and node._vjp is None:
            if node.grad is None:
                node.grad = grads[id(node)].copy()
            else:
                node.grad = node.grad + grads[id(node)]
    return grads


def grad_check(function: Callable[[], Tensor], params: Iterable[Tensor],
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``function`` must rebuild its graph on every call (define-by-run) and
    return a scalar Tensor; relative error uses max(1, |analytic|) in the
    denominator.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = function()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = function().item()
            flat[i] = orig - epsilon
            down = function().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(an_flat[i] - numeric) / max(1.0, abs(an_flat[i]))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
