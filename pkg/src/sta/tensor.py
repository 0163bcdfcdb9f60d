"""Dense float64 tensors with reverse-mode automatic differentiation.

Every forward op records its parents and a local gradient rule on the output
tensor.  Nodes carry a monotonically increasing creation index, so sorting the
reachable nodes by that index in descending order is both the reverse
construction order and a valid topological order for the backward sweep.

Binary elementwise ops require identical shapes.  The only broadcasting mode is
``add_bias``, which adds a vector along the trailing axis.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_counter = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class AxisError(ValueError):
    """Reduction axis out of range."""


class DegenerateSliceError(ValueError):
    """A softmax slice has no unmasked element."""


class RankError(ValueError):
    """Operation requires a different tensor rank."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_counter)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise AxisError(f"axis {axis} out of range for rank {a.ndim}")
    return axis % a.ndim


# ---------------------------------------------------------------- products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 operands, or batched product of rank-3 operands
    sharing the same leading batch size."""
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise DimensionError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: shape mismatch {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        return g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g

    return _make(A @ B, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise RankError(f"transpose needs rank >= 2, got {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# ------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    A = a.data
    return _make(A * A, (a,), lambda g: (2.0 * A * g,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Bias-row broadcast: add a vector of length ``x.shape[-1]`` to every
    trailing-axis row of ``x``."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: shape mismatch {x.shape} and {bias.shape}")
    lead = tuple(range(x.ndim - 1))
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead)))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiable) array of identical shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"mul_const: shape mismatch {a.shape} vs {c.shape}")
    return _make(a.data * c, (a,), lambda g: (g * c,))


# -------------------------------------------------------------- reductions


def reduce_sum(a: Tensor, axis: int) -> Tensor:
    ax = _check_axis(a, axis)
    shape = a.shape
    return _make(
        a.data.sum(axis=ax),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),),
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def reduce_max(a: Tensor, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Max along ``axis``.  Gradient goes to the first maximal element of each
    slice.  With ``mask`` (same shape as ``a``), only True positions compete."""
    ax = _check_axis(a, axis)
    x = a.data
    if mask is not None:
        mask = _check_mask(a, mask, ax)
        x = np.where(mask, x, -np.inf)
    idx = np.expand_dims(np.argmax(x, axis=ax), ax)
    out = np.take_along_axis(x, idx, axis=ax).squeeze(ax)
    shape = a.shape

    def rule(g):
        grad = np.zeros(shape)
        np.put_along_axis(grad, idx, np.expand_dims(g, ax), axis=ax)
        return (grad,)

    return _make(out, (a,), rule)


def _check_mask(a: Tensor, mask, ax: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match {a.shape}")
    if not mask.any(axis=ax).all():
        raise DegenerateSliceError("every element of some slice is masked")
    return mask


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stabilized softmax along ``axis``; masked-out positions get weight 0."""
    ax = _check_axis(a, axis)
    x = a.data
    if mask is not None:
        mask = _check_mask(a, mask, ax)
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=ax, keepdims=True))
    out = e / e.sum(axis=ax, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _make(out, (a,), rule)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(a, axis)
    x = a.data
    shifted = x - x.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=ax, keepdims=True),))


# ----------------------------------------------------------- restructuring


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice)) or i is Ellipsis for i in parts)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    basic = _is_basic(index)

    def rule(g):
        grad = np.zeros(shape)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _make(np.array(a.data[index]), (a,), rule)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row gather: ``out[..., :] = table[ids[...], :]``; the adjoint scatters
    (accumulating) into the touched rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise RankError(f"gather_rows needs a rank-2 table, got {table.shape}")
    shape = table.shape

    def rule(g):
        grad = np.zeros(shape)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (grad,)

    return _make(table.data[ids], (table,), rule)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Pick one entry per slice along ``axis``; ``indices`` has ``a``'s shape
    with ``axis`` removed."""
    ax = _check_axis(a, axis)
    idx = np.expand_dims(np.asarray(indices, dtype=np.int64), ax)
    shape = a.shape

    def rule(g):
        grad = np.zeros(shape)
        np.put_along_axis(grad, idx, np.expand_dims(g, ax), axis=ax)
        return (grad,)

    return _make(np.take_along_axis(a.data, idx, axis=ax).squeeze(ax), (a,), rule)


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and tile ``n`` copies along it (explicit,
    never implicit)."""
    out = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return _make(out, (a,), lambda g: (g.sum(axis=axis),))


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Repeat each entry of the leading axis ``n`` times consecutively."""
    lead = a.shape[0]
    rest = a.shape[1:]
    out = np.repeat(a.data, n, axis=0)
    return _make(out, (a,), lambda g: (g.reshape((lead, n) + rest).sum(axis=1),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack of empty sequence")
    for t in tensors:
        _same_shape(tensors[0], t, "stack")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    n = len(tensors)

    def rule(g):
        return tuple(np.take(g, i, axis=ax) for i in range(n))

    return _make(out, tuple(tensors), rule)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=ax)))


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name: ``add``, ``mul``, ``sub`` or ``relu``."""
    if op == "relu":
        return relu(a)
    binary = {"add": add, "mul": mul, "sub": sub}
    if op not in binary:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ValueError(f"{op} needs two operands")
    return binary[op](a, b)


def reduce(op: str, a: Tensor, axis: int) -> Tensor:
    if op == "sum":
        return reduce_sum(a, axis)
    if op == "max":
        return reduce_max(a, axis)
    raise ValueError(f"unknown reduction {op!r}")


# ---------------------------------------------------------------- backward


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` accumulate into ``.grad``; the returned
    map holds the gradient contributed by this call for each such leaf.  The
    graph is released afterwards.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack_.extend(p for p in t._parents if p.requires_grad and p._id not in nodes)

    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            leaves[t] = g
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
        t._parents = ()
        t._backward = None
    return leaves


# -------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    failures: list[tuple[str, tuple[int, ...], float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        state = "pass" if self.passed else f"FAIL ({len(self.failures)} elements)"
        return f"gradcheck {state}: worst rel-err {self.max_rel_error:.3e} over {self.n_checked} elements (tol {self.tol:g})"


def relative_error(g_ad, g_fd, floor: float = 1e-8):
    g_ad = np.asarray(g_ad, dtype=np.float64)
    g_fd = np.asarray(g_fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), floor)
    return np.abs(g_ad - g_fd) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Iterable[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of the scalar ``f()`` against central
    differences ``(f(x+h) - f(x-h)) / 2h`` for every element of ``params``.

    ``f`` takes no arguments and must read the parameters' current ``data``.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    ad = backward(f())
    analytic = [ad.get(p, np.zeros_like(p.data)) for p in params]

    worst = 0.0
    n = 0
    failures = []
    with no_grad():
        for name, p, g_ad in zip(names, params, analytic):
            flat = p.data.reshape(-1)
            g_ad = g_ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                g_fd = (fp - fm) / (2.0 * h)
                err = float(relative_error(g_ad[i], g_fd))
                n += 1
                worst = max(worst, err)
                if err > tol:
                    failures.append((name, np.unravel_index(i, p.shape), float(g_ad[i]), g_fd, err))
    return GradCheckReport(worst, tol, n, failures)
