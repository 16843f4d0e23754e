"""Eager reverse-mode differentiation over dense float64 arrays.

Every operation computes its value immediately and records the inputs plus a
closure that maps the output gradient to input gradients.  ``backward`` walks
the recorded graph in reverse topological order.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> y = reduce_sum(mul(x, x))
    >>> backward(y, [x])[0]
    array([2., 4., 6.])
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

OP_KINDS = (
    "leaf", "matmul", "add", "mul", "scale", "relu", "sigmoid", "softmax-masked",
    "dropout", "concat", "slice", "reduce-mean-masked", "transpose", "broadcast",
    "reshape", "sum", "log", "clip",
)

_checked = False


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Reject non-finite operands inside the block."""
    global _checked
    prev, _checked = _checked, enabled
    try:
        yield
    finally:
        _checked = prev


class Tensor:
    """A graph node: value, optional gradient, and the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.inputs: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    # Operator sugar keeps model code readable.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(*arrays: np.ndarray) -> None:
    if _checked:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite value in operand of shape {a.shape}")


def _node(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(value)
    out.op = op
    out.inputs = tuple(inputs)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a} and {b}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    _check_finite(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _node("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    _check_finite(a.data, b.data)
    av, bv = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return _node("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if ra else None,
                            _unbroadcast(g * av, bv.shape) if rb else None))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data)
    return _node("scale", a.data * factor, (a,), lambda g: (g * factor,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data)
    on = a.data > 0
    return _node("relu", np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    x = a.data
    return _node("log", np.log(x), (a,), lambda g: (g / x,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def dropout(a, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or outside training."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return _node("dropout", a.data.copy(), (a,), lambda g: (g,))
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _node("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# contractions and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    _check_finite(a.data, b.data)
    av, bv = a.data, b.data

    if bv.ndim == 2:
        # stacked rows times one matrix: flatten to a single 2-D product
        flat = av.reshape(-1, av.shape[-1])

        def back_2d(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bv.T).reshape(av.shape) if a.requires_grad else None
            return ga, (flat.T @ g2 if b.requires_grad else None)

        return _node("matmul", (flat @ bv).reshape(av.shape[:-1] + bv.shape[-1:]), (a, b), back_2d)

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _node("matmul", av @ bv, (a, b), back)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _node("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inverse),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {orig} into {tuple(shape)}") from None
    return _node("reshape", value, (a,), lambda g: (g.reshape(orig),))


def broadcast(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if _broadcast_shape(a.shape, shape) != shape:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}")
    orig = a.shape
    return _node("broadcast", np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, orig),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of nothing")
    ndim = ts[0].data.ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.data.ndim != ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeError(f"concat shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _node("concat", np.concatenate([t.data for t in ts], axis=ax), ts,
                 lambda g: tuple(np.split(g, bounds, axis=ax)))


def slice_(a, index) -> Tensor:
    """Basic (non-fancy) indexing; ``index`` is anything numpy accepts as a view."""
    a = as_tensor(a)
    orig = a.shape

    def back(g):
        full = np.zeros(orig)
        full[index] = g
        return (full,)

    return _node("slice", a.data[index].copy(), (a,), back)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, orig).copy(),)

    return _node("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def reduce_mean_masked(a, mask, axis=None) -> Tensor:
    """Mean over cells where ``mask`` is 1; masked cells get zero gradient.

    With ``axis=None`` the result is a scalar.  Slices with no unmasked cell
    yield 0.
    """
    a = as_tensor(a)
    m = np.asarray(mask, dtype=np.float64)
    _broadcast_shape(a.shape, m.shape)
    m = np.broadcast_to(m, a.shape)
    count = m.sum(axis=axis, keepdims=True)
    denom = np.where(count > 0, count, 1.0)
    value = (np.where(m > 0, a.data, 0.0)).sum(axis=axis, keepdims=True) / denom

    def back(g):
        g = np.asarray(g).reshape(value.shape)
        return (np.broadcast_to(g / denom, a.shape) * m,)

    out = value.reshape(()) if axis is None else np.squeeze(value, axis=axis)
    return _node("reduce-mean-masked", out, (a,), back)


def softmax_masked(a, mask, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to positions where ``mask`` is 1.

    Masked positions get exactly zero weight, and the values stored there
    never influence the result.  A slice with no unmasked position is all
    zeros.
    """
    a = as_tensor(a)
    m = np.asarray(mask)
    _broadcast_shape(a.shape, m.shape)
    on = np.broadcast_to(m > 0, a.shape)
    shifted = np.where(on, a.data, -np.inf)
    if _checked:
        _check_finite(a.data[on])
    top = np.max(shifted, axis=axis, keepdims=True)
    top[~np.isfinite(top)] = 0.0
    # exp(-inf) is exactly 0, so masked slots drop out of the sum
    e = np.exp(shifted - top)
    total = e.sum(axis=axis, keepdims=True)
    s = e / np.where(total > 0, total, 1.0)

    def back(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _node("softmax-masked", s, (a,), back)


_FORWARD = {
    "matmul": matmul, "add": add, "mul": mul, "scale": scale, "relu": relu,
    "sigmoid": sigmoid, "softmax-masked": softmax_masked, "dropout": dropout,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis), "slice": slice_,
    "reduce-mean-masked": reduce_mean_masked, "transpose": transpose,
    "broadcast": broadcast, "reshape": reshape, "sum": reduce_sum, "log": log,
    "clip": clip,
}


def forward(op: str, *inputs, **attrs) -> Tensor:
    """Apply ``op`` by name, e.g. ``forward("softmax-masked", x, mask=m)``."""
    try:
        fn = _FORWARD[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}") from None
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | dict:
    """Populate ``.grad`` on every node that depends on a trainable leaf.

    Returns the gradients of ``wrt`` in order (zeros for leaves the root does
    not reach), or a ``{leaf: grad}`` dict over reachable trainable leaves
    when ``wrt`` is None.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node.inputs, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    if wrt is None:
        return {n: n.grad for n in order if n.op == "leaf" and n.grad is not None}
    out = []
    reached = {id(n) for n in order}
    for leaf in wrt:
        g = leaf.grad if id(leaf) in reached and leaf.grad is not None else None
        out.append(np.zeros_like(leaf.data) if g is None else g)
    return out


def grad_check(builder: Callable[..., Tensor], inputs, step: float = 1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` over all coordinates.

    ``builder`` receives one Tensor per input array and must return a scalar.
    Numeric derivatives are central differences.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = isinstance(inputs, np.ndarray) or isinstance(inputs, Tensor)
    arrays = [np.array(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=np.float64)] \
        if single else [np.array(getattr(x, "data", x), dtype=np.float64) for x in inputs]

    def evaluate() -> float:
        return float(builder(*[Tensor(a) for a in arrays]).data)

    if evaluate() != evaluate():
        raise ValueError("builder is not deterministic (disable dropout)")

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    analytic = backward(builder(*leaves), leaves)

    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate()
            flat[i] = orig - step
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
