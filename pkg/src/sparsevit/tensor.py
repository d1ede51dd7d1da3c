"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on tensors that require gradients records a node holding its
operands and a closure over the forward values its backward rule needs.
``backward`` walks the recorded graph once in reverse topological order and
returns a mapping from each leaf tensor to its gradient. The graph is freed
afterwards.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_grad_enabled = True

# tanh-form GELU constants
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, parameter updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded operation: its operands and the rule mapping dL/dout to dL/dinputs."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


def _validated(arr: np.ndarray) -> np.ndarray:
    if any(d <= 0 for d in arr.shape):
        raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise FloatingPointError("tensor values must be finite (NaN/Inf rejected)")
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("_data", "requires_grad", "_node")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self._data = _validated(arr)
        self.requires_grad = bool(requires_grad)
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> Tensor:
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.base is not None or not arr.flags.writeable or not arr.flags.c_contiguous:
            # never let a view alias another tensor's buffer flags
            arr = arr.copy()
        t._data = _validated(arr)
        t.requires_grad = requires_grad
        t._node = None
        return t

    # -- basic accessors -------------------------------------------------

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor._wrap(self._data)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self._data!r}"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self)


Gradients = dict  # Tensor (by identity) -> Tensor of the same shape


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, out: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    t = Tensor._wrap(out, requires_grad=track)
    if track:
        t._node = Node(op, parents, backward_fn)
    return t


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (covers bias-row addition)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result("add", out, (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise DimensionError(f"bias {bias.shape} does not match rows of {x.shape}")
    return add(x, bias)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _result("mul", out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result("scale", a.data * c, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result("tanh", out, (a,), backward)


def log(a: Tensor) -> Tensor:
    """Natural log; non-positive inputs produce non-finite values and are rejected."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result("log", out, (a,), backward)


def log1p(a: Tensor) -> Tensor:
    """ln(1 + a), accurate for small ``a``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log1p(a.data)

    def backward(g):
        return (g / (1.0 + a.data),)

    return _result("log1p", out, (a,), backward)


# -- linear algebra and shape manipulation -------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result("matmul", out, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 axes, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return _result("reshape", out, (a,), backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from exc

    def backward(g):
        return (unbroadcast(g, a.shape),)

    return _result("broadcast_to", out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", out, tensors, backward)


def getitem(a: Tensor, index) -> Tensor:
    """Indexing/slicing; gradient scatters back into a zero tensor."""
    out = a.data[index]
    if np.ndim(out) == 0:
        out = np.asarray(out)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _result("getitem", out, (a,), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    return getitem(a, tuple(index))


# -- reductions ------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes)
    return scale(sum_(a, axis=axes, keepdims=keepdims), 1.0 / count)


# -- fused neural-network primitives ---------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result("softmax", out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each row over the last axis (population variance), then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match feature dim {d}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result("layer_norm", out, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5x(1 + tanh[sqrt(2/pi)(x + 0.044715x^3)])."""
    v = x.data
    t = np.tanh(_GELU_C * (v + _GELU_A * (v * v * v)))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return _result("gelu", out, (x,), backward)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects B x C logits, got {logits.shape}")
    batch, classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise DimensionError(f"expected {batch} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError("labels must be integers")
    if labels.min() < 0 or labels.max() >= classes:
        raise IndexError(f"labels must lie in [0, {classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(batch)
    out = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _result("cross_entropy", np.asarray(out), (logits,), backward)


# -- graph traversal ---------------------------------------------------------


class Graph:
    """Tensors reachable from an output, operands always before their consumers."""

    def __init__(self, output: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, int]] = [(output, 0)]
        seen.add(id(output))
        while stack:
            node, i = stack.pop()
            parents = node._node.parents if node._node is not None else ()
            if i < len(parents):
                stack.append((node, i + 1))
                parent = parents[i]
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, 0))
            else:
                order.append(node)
        self.nodes = order

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t._node is None]

    def free(self) -> None:
        for t in self.nodes:
            if t._node is not None:
                t._node.parents = ()
                t._node.backward_fn = None


def backward(loss: Tensor) -> Gradients:
    """Gradients of a scalar ``loss`` for every leaf tensor requiring grad."""
    if not isinstance(loss, Tensor) or loss.shape != ():
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ContractError(f"backward needs a scalar loss tensor, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by recorded operations")
    if loss._node is not None and loss._node.backward_fn is None:
        raise ContractError("graph already freed by a previous backward call")

    graph = Graph(loss)
    grads: dict[Tensor, np.ndarray] = {loss: np.ones(())}
    result: Gradients = {}
    for t in reversed(graph.nodes):
        g = grads.pop(t)
        node = t._node
        if node is None:
            result[t] = Tensor._wrap(np.array(g, dtype=np.float64))
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
    graph.free()
    # graph order is operands-first; report leaves in that order for stability
    return {t: result[t] for t in graph.leaves()}


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], p: Tensor,
                     step: float = 1e-6) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``p``, one coordinate at a time."""
    values = finite_diff_entries(f, p, range(p.size), step)
    return Tensor(values.reshape(p.shape))


def finite_diff_entries(f: Callable[[Tensor], Tensor | float], p: Tensor,
                        flat_indices, step: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` for selected flat coordinates of ``p``."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    base = p.data.reshape(-1)
    out = []
    with no_grad():
        for i in flat_indices:
            plus = base.copy()
            plus[i] += step
            minus = base.copy()
            minus[i] -= step
            fp = _scalar(f(Tensor(plus.reshape(p.shape))))
            fm = _scalar(f(Tensor(minus.reshape(p.shape))))
            out.append((fp - fm) / (2.0 * step))
    return np.array(out, dtype=np.float64)


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)
