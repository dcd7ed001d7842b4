"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a grad-flagged tensor records its parents and a
backward rule on the result, so the graph is built implicitly while the
forward pass runs.  ``Tensor.backward`` walks that graph in reverse
topological order.  A graph may be differentiated once; afterwards the leaves
must be reset with :func:`zero_grad` before another backward pass, which is
how the training loop rebuilds the graph every iteration.

Broadcasting is deliberately limited to scalar-tensor pairs.  Anything else
(row biases, per-element diffusivities) goes through :func:`broadcast_along`
so shapes stay explicit at the call site.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class AutodiffError(Exception):
    """Base class for errors raised by the tensor engine."""


class ShapeError(AutodiffError, ValueError):
    pass


class DomainError(AutodiffError, ValueError):
    pass


class GraphError(AutodiffError, RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)  # always copies; leaves own their buffer
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out._consumed = False
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- operator sugar -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- differentiation ------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` of every grad-flagged leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already differentiated; rebuild it and zero_grad() the leaves")
        if not self.requires_grad:
            return
        order = topological_order(self)
        leaves = [t for t in order if t.is_leaf]
        stale = [t.name or repr(t) for t in leaves if t.grad is not None]
        if stale:
            raise GraphError(f"leaf gradients not reset before backward: {stale[:3]}")

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if g is not None:
                    node.grad = np.array(g, dtype=DTYPE).reshape(node.shape)
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True
        # leaves untouched by the root still get an explicit zero gradient
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        self._consumed = True


def topological_order(root: Tensor) -> list[Tensor]:
    """Grad-flagged nodes reachable from ``root``, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# elementwise binary ops (equal shapes or scalar broadcast)
# ---------------------------------------------------------------------------

def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is scalar")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        idx = tuple(int(i) for i in np.argwhere(bd == 0)[0])
        raise DomainError(f"div: zero divisor at index {idx}")

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return Tensor._result(ad / bd, (a, b), backward, "div")


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def neg(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._result(-x.data, (x,), lambda g: (-g,), "neg")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._result(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = np.multiply(x.data, 0.5)
    np.tanh(s, out=s)  # 0.5 * (1 + tanh(x/2)) never overflows
    s += 1.0
    s *= 0.5

    def backward(g):
        d = s * s
        np.subtract(s, d, out=d)
        d *= g
        return (d,)

    return Tensor._result(s, (x,), backward, "sigmoid")


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return Tensor._result(e, (x,), lambda g: (g * e,), "exp")


def _first_bad(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    bad = ~(xd > 0)
    if bad.any():
        idx = _first_bad(bad)
        raise DomainError(f"log: non-positive input {xd[idx]!r} at index {idx}")
    return Tensor._result(np.log(xd), (x,), lambda g: (g / xd,), "log")


ln = log


def pow_scalar(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    p = float(p)
    if not p.is_integer():
        bad = ~(xd > 0)
        if bad.any():
            idx = _first_bad(bad)
            raise DomainError(f"pow: fractional exponent {p} needs positive input, got {xd[idx]!r} at {idx}")
    out = xd**p
    return Tensor._result(out, (x,), lambda g: (g * p * xd ** (p - 1.0),), f"pow[{p}]")


def clamp_min(x, floor: float) -> tuple[Tensor, int]:
    """Clamp from below; returns the clamped tensor and how many entries moved.

    Gradient flows only through entries that were left untouched.
    """
    x = as_tensor(x)
    xd = x.data
    mask = xd < floor
    count = int(mask.sum())
    if count == 0:
        return x, 0
    keep = ~mask
    return Tensor._result(np.where(mask, floor, xd), (x,), lambda g: (g * keep,), "clamp_min"), count


_UNARY = {
    "neg": neg,
    "square": square,
    "sigmoid": sigmoid,
    "exp": exp,
    "ln": log,
    "log": log,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(fn: str, x, y=None, *, exponent: float | None = None) -> Tensor:
    """Dispatch by name; mirrors the enum used in configuration and tests."""
    if fn in _BINARY:
        if y is None:
            raise ValueError(f"{fn} needs two operands")
        return _BINARY[fn](x, y)
    if fn in _UNARY:
        return _UNARY[fn](x)
    if fn == "pow_scalar":
        if exponent is None:
            raise ValueError("pow_scalar needs exponent=")
        return pow_scalar(x, exponent)
    raise ValueError(f"unknown elementwise op {fn!r}")


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from err
    return Tensor._result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._result(np.array(x.data[key]), (x,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: nothing to concatenate")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), backward, "concat")


def broadcast_along(v, shape: Sequence[int], axis: int) -> Tensor:
    """Repeat a 1-D tensor to ``shape`` with its entries laid along ``axis``."""
    v = as_tensor(v)
    shape = tuple(int(s) for s in shape)
    ax = axis % len(shape)
    if v.ndim != 1 or v.shape[0] != shape[ax]:
        raise ShapeError(f"broadcast_along: vector {v.shape} does not fit axis {axis} of {shape}")
    view = [1] * len(shape)
    view[ax] = shape[ax]
    out = np.broadcast_to(v.data.reshape(view), shape).copy()
    letters = "abcdefgh"[: len(shape)]
    reduce_spec = f"{letters}->{letters[ax]}"
    return Tensor._result(out, (v,), lambda g: (np.einsum(reduce_spec, g),), "broadcast")


def add_bias(x, b, axis: int) -> Tensor:
    """``x + b`` with the 1-D bias laid along ``axis``; shapes checked explicitly."""
    x, b = as_tensor(x), as_tensor(b)
    ax = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[ax]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[ax] = x.shape[ax]
    letters = "abcdefgh"[: x.ndim]
    reduce_spec = f"{letters}->{letters[ax]}"  # einsum beats ndarray.sum over several axes
    return Tensor._result(
        x.data + b.data.reshape(view), (x, b), lambda g: (g, np.einsum(reduce_spec, g)), "add_bias"
    )


def tsum(x) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return Tensor._result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(src, float(g)),), "sum")


# ---------------------------------------------------------------------------
# linear algebra, convolution, reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


_ACTIVATIONS = ("identity", "sigmoid")


def conv1d(signal, kernel, bias_pre=None, bias_post=None, activation: str = "identity") -> Tensor:
    """Valid 1-D cross-correlation, ``act(signal * kernel + bias_pre) + bias_post``.

    signal is ``[N, C_in, W]``, kernel ``[C_in, C_out, K]``; output ``[N, C_out, W-K+1]``.
    """
    signal, kernel = as_tensor(signal), as_tensor(kernel)
    if activation not in _ACTIVATIONS:
        raise ValueError(f"conv1d: unknown activation {activation!r}")
    if signal.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d: expected [N,C_in,W] and [C_in,C_out,K], got {signal.shape} and {kernel.shape}")
    n, c_in, w = signal.shape
    kc_in, c_out, k = kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d: signal has {c_in} channels, kernel expects {kc_in}")
    if k > w:
        raise ShapeError(f"conv1d: kernel width {k} exceeds signal width {w}")
    sd, kd = signal.data, kernel.data
    w_out = w - k + 1
    if k == 1:
        k0 = kd[:, :, 0]
        out = np.einsum("ncw,co->now", sd, k0)

        def backward(g):
            return np.einsum("now,co->ncw", g, k0), np.einsum("ncw,now->co", sd, g)[:, :, None]

    else:
        # per tap: [C_out, C_in] @ [N, C_in, W'] -> [N, C_out, W']
        taps = [np.ascontiguousarray(kd[:, :, j].T) for j in range(k)]
        out = taps[0] @ sd[:, :, 0:w_out]
        for j in range(1, k):
            out += taps[j] @ sd[:, :, j : j + w_out]

        def backward(g):
            gs = np.zeros_like(sd)
            gk = np.empty_like(kd)
            for j in range(k):
                gs[:, :, j : j + w_out] += taps[j].T @ g
                gk[:, :, j] = np.einsum("ncw,now->co", sd[:, :, j : j + w_out], g)
            return gs, gk

    y = Tensor._result(out, (signal, kernel), backward, "conv1d")
    if bias_pre is not None:
        y = add_bias(y, bias_pre, axis=1)
    if activation == "sigmoid":
        y = sigmoid(y)
    if bias_post is not None:
        y = add_bias(y, bias_post, axis=1)
    return y


def mse(x) -> Tensor:
    """Mean over samples (leading axis) of each sample's squared norm.

    A 0-d or 1-d tensor counts as a single sample.
    """
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("mse: empty tensor")
    xd = x.data
    n = xd.shape[0] if xd.ndim >= 2 else 1
    val = np.asarray(np.vdot(xd, xd) / n)
    return Tensor._result(val, (x,), lambda g: ((2.0 / n) * float(g) * xd,), "mse")
