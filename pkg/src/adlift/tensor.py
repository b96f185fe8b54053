"""Dense float64 tensors with taped reverse-mode differentiation and Adam.

Every op records its parents and a backward closure on the produced tensor;
``backward()`` replays the recorded tape in reverse topological order. All
arithmetic is float64 numpy, so results are deterministic for a fixed
platform and thread configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

CHECKPOINT_FORMAT = "adlift-tensors"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """An op received operands with incompatible shapes."""


class GraphError(RuntimeError):
    """Backward was requested on a tensor without a usable recorded graph."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer step received a gradient containing NaN or inf."""


ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        values: ArrayLike,
        requires_grad: bool = False,
        op: str = "leaf",
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every upstream tensor."""
        if self.values.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward is None and not self._parents:
            raise GraphError("backward called on a tensor with no recorded computation")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> List[Tensor]:
    # iterative three-color DFS; sinkhorn graphs are too deep for recursion
    order: List[Tensor] = []
    state: Dict[int, int] = {}
    stack = [root]
    while stack:
        node = stack[-1]
        st = state.get(id(node))
        if st is None:
            state[id(node)] = 0
            for p in node._parents:
                if id(p) not in state:
                    stack.append(p)
        elif st == 0:
            state[id(node)] = 1
            order.append(node)
            stack.pop()
        else:
            stack.pop()
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op_name: str, a: Tensor, b: Tensor, fwd, bwd_a, bwd_b) -> Tensor:
    try:
        values = fwd(a.values, b.values)
    except ValueError as exc:
        raise ShapeError(f"{op_name}: {a.shape} vs {b.shape}") from exc

    def backward(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(bwd_a(g), a.shape))
        _accum(b, _unbroadcast(bwd_b(g), b.shape))

    return Tensor(values, op=op_name, parents=(a, b), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g: g * b.values, lambda g: g * a.values)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g: g / b.values,
                   lambda g: -g * a.values / (b.values * b.values))


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return Tensor(-a.values, op="neg", parents=(a,), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    values = a.values @ b.values

    def backward(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    return Tensor(values, op="matmul", parents=(a, b), backward=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0

    def backward(g):
        _accum(a, g * mask)

    return Tensor(np.where(mask, a.values, 0.0), op="relu", parents=(a,), backward=backward)


def elu(a: Tensor) -> Tensor:
    mask = a.values > 0.0
    expm = np.expm1(np.minimum(a.values, 0.0))

    def backward(g):
        _accum(a, g * np.where(mask, 1.0, expm + 1.0))

    return Tensor(np.where(mask, a.values, expm), op="elu", parents=(a,), backward=backward)


def exp(a: Tensor) -> Tensor:
    values = np.exp(a.values)

    def backward(g):
        _accum(a, g * values)

    return Tensor(values, op="exp", parents=(a,), backward=backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g / a.values)

    return Tensor(np.log(a.values), op="log", parents=(a,), backward=backward)


def sqrt(a: Tensor) -> Tensor:
    values = np.sqrt(a.values)

    def backward(g):
        _accum(a, g / (2.0 * values))

    return Tensor(values, op="sqrt", parents=(a,), backward=backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * 2.0 * a.values)

    return Tensor(a.values * a.values, op="square", parents=(a,), backward=backward)


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return Tensor(values, op="sum", parents=(a,), backward=backward)


def tmean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.values.size if axis is None else a.shape[axis]
    values = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape) / count)

    return Tensor(values, op="mean", parents=(a,), backward=backward)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """Stable log-sum-exp reduction along one axis (axis is dropped)."""
    hi = a.values.max(axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    values = np.log(np.exp(a.values - hi).sum(axis=axis, keepdims=True)) + hi
    softmax = np.exp(a.values - values)
    values = np.squeeze(values, axis=axis)

    def backward(g):
        _accum(a, np.expand_dims(g, axis) * softmax)

    return Tensor(values, op="logsumexp", parents=(a,), backward=backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor(values, op="concat", parents=tuple(tensors), backward=backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    values = a.values[idx]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        np.add.at(a.grad, idx, g)

    return Tensor(values, op="gather", parents=(a,), backward=backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def backward(g):
        _accum(a, g.reshape(a.shape))

    return Tensor(a.values.reshape(shape), op="reshape", parents=(a,), backward=backward)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self, params: Dict[str, Tensor], config: Optional[AdamConfig] = None):
        self.config = config or AdamConfig()
        self.step_count = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update with bias correction; mutates params in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    cfg = state.config
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.values -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# ---------------------------------------------------------------------------
# Checkpoint I/O (versioned JSON; row-major value lists, see README)


def save_tensors(path: str, tensors: Dict[str, Union[Tensor, np.ndarray]]) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tensors": {},
    }
    for name in sorted(tensors):
        arr = tensors[name].values if isinstance(tensors[name], Tensor) else np.asarray(tensors[name])
        payload["tensors"][name] = {
            "shape": list(arr.shape),
            "data": arr.astype(np.float64).ravel().tolist(),
        }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_tensors(path: str) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a tensor checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    out = {}
    for name, entry in payload["tensors"].items():
        out[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return out
