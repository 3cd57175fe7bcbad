"""Reverse-mode automatic differentiation over dense float tensors.

The graph is recorded define-by-run: each operation stores its parent
tensors and a backward rule on its output. Backward rules are themselves
written in terms of the public operations, so gradients can be recorded
and differentiated again (``backward(..., create_graph=True)``), which the
gradient-norm penalty on the critic requires.

Two dtypes are supported: float32 (training) and float64 (gradient
checking). Broadcasting is deliberately restricted to scalars (0-d
tensors) and singleton-channel maps; vector-to-map broadcasts go through
``replicate_spatial`` explicitly. Images use NCHW layout.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import rng

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True
_finite_checks = False


class AutogradError(RuntimeError):
    """Misuse of the recording or backward machinery."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def enable_grad():
    """Re-enable graph recording inside the block (nestable under no_grad)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every op output (slow; meant for tests)."""
    global _finite_checks
    _finite_checks = bool(enabled)


class Tensor:
    """Dense float tensor, optionally part of the recorded graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise AutogradError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar; python numbers route to the scalar ops.
    def __add__(self, other):
        return add_scalar(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return scalar_mul(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def mean(self):
        return mean_all(self)

    def sum(self):
        return sum_all(self)

    def abs(self):
        return absolute(self)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    """Wrap ``data`` in a Tensor, recording the op if the graph is live."""
    if _finite_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
        out._op = op
    return out


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError(f"{op} expects Tensor operands")
    if a.dtype != b.dtype:
        raise AutogradError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if (
        len(sa) == 4
        and len(sb) == 4
        and sa[0] == sb[0]
        and sa[2:] == sb[2:]
        and (sa[1] == 1 or sb[1] == 1)
    ):
        return
    raise AutogradError(f"{op}: incompatible shapes {sa} and {sb}")


def _shrink(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return sum_all(g)
    return sum_channels(g)


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")

    def bwd(up, need):
        ga = _shrink(up, a.shape) if need[0] else None
        gb = _shrink(up, b.shape) if need[1] else None
        return ga, gb

    return _record(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")

    def bwd(up, need):
        ga = _shrink(up, a.shape) if need[0] else None
        gb = _shrink(neg(up), b.shape) if need[1] else None
        return ga, gb

    return _record(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")

    def bwd(up, need):
        ga = _shrink(mul(up, b), a.shape) if need[0] else None
        gb = _shrink(mul(up, a), b.shape) if need[1] else None
        return ga, gb

    return _record(a.data * b.data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    def bwd(up, need):
        return (neg(up) if need[0] else None,)

    return _record(-a.data, (a,), bwd, "neg")


def absolute(a: Tensor) -> Tensor:
    # Subgradient at zero is defined as zero (np.sign(0) == 0).
    sign = Tensor(np.sign(a.data))

    def bwd(up, need):
        return (mul(up, sign) if need[0] else None,)

    return _record(np.abs(a.data), (a,), bwd, "abs")


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(up, need):
        return (scalar_mul(up, s) if need[0] else None,)

    return _record(a.data * np.asarray(s, dtype=a.dtype), (a,), bwd, "scalar_mul")


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(up, need):
        return (up if need[0] else None,)

    return _record(a.data + np.asarray(s, dtype=a.dtype), (a,), bwd, "add_scalar")


def pow_const(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a fixed exponent (a > 0 for fractional p)."""
    p = float(p)

    def bwd(up, need):
        if not need[0]:
            return (None,)
        return (scalar_mul(mul(up, pow_const(a, p - 1.0)), p),)

    return _record(a.data ** np.asarray(p, dtype=a.dtype), (a,), bwd, "pow_const")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = Tensor((a.data > 0).astype(a.dtype))

    def bwd(up, need):
        return (mul(up, mask) if need[0] else None,)

    return _record(np.maximum(a.data, 0), (a,), bwd, "relu")


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    alpha = float(alpha)
    pos = a.data > 0
    # derivative at 0 is alpha, matching the |.| convention
    mask = Tensor(np.where(pos, np.asarray(1.0, a.dtype), np.asarray(alpha, a.dtype)))

    def bwd(up, need):
        return (mul(up, mask) if need[0] else None,)

    return _record(np.where(pos, a.data, a.data * np.asarray(alpha, a.dtype)), (a,), bwd, "leaky_relu")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(up, need):
        if not need[0]:
            return (None,)
        return (mul(up, add_scalar(neg(mul(out, out)), 1.0)),)

    out = _record(out_data, (a,), bwd, "tanh")
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(a.dtype)

    def bwd(up, need):
        if not need[0]:
            return (None,)
        return (mul(up, mul(out, add_scalar(neg(out), 1.0))),)

    out = _record(out_data, (a,), bwd, "sigmoid")
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)) in the overflow-safe form."""
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(up, need):
        return (mul(up, sigmoid(a)) if need[0] else None,)

    return _record(out_data.astype(a.dtype), (a,), bwd, "softplus")


# ---------------------------------------------------------------------------
# structural primitives (each is its adjoint partner's backward rule)
# ---------------------------------------------------------------------------

def _require_nchw(x: Tensor, op: str) -> None:
    if len(x.shape) != 4:
        raise AutogradError(f"{op} expects an (N,C,H,W) tensor, got shape {x.shape}")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_nchw(a, "concat_channels")
    _require_nchw(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise AutogradError(f"concat_channels: mismatched dims {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise AutogradError("concat_channels: dtype mismatch")
    ca = a.shape[1]

    def bwd(up, need):
        ga = slice_channels(up, 0, ca) if need[0] else None
        gb = slice_channels(up, ca, up.shape[1]) if need[1] else None
        return ga, gb

    return _record(np.concatenate([a.data, b.data], axis=1), (a, b), bwd, "concat_channels")


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    _require_nchw(x, "slice_channels")
    n, c, h, w = x.shape
    if not (0 <= lo < hi <= c):
        raise AutogradError(f"slice_channels: bad range [{lo},{hi}) for C={c}")

    def bwd(up, need):
        if not need[0]:
            return (None,)
        g = up
        if lo > 0:
            g = concat_channels(Tensor(np.zeros((n, lo, h, w), x.dtype)), g)
        if hi < c:
            g = concat_channels(g, Tensor(np.zeros((n, c - hi, h, w), x.dtype)))
        return (g,)

    return _record(np.ascontiguousarray(x.data[:, lo:hi]), (x,), bwd, "slice_channels")


def replicate_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """Broadcast a per-sample vector (N,n) into a constant map (N,n,h,w)."""
    if len(v.shape) != 2:
        raise AutogradError(f"replicate_spatial expects (N,n), got {v.shape}")
    if h < 1 or w < 1:
        raise AutogradError("replicate_spatial: h and w must be >= 1")
    data = np.ascontiguousarray(np.broadcast_to(v.data[:, :, None, None], v.shape + (h, w)))

    def bwd(up, need):
        return (sum_spatial(up) if need[0] else None,)

    return _record(data, (v,), bwd, "replicate_spatial")


def sum_spatial(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C), summing over H and W."""
    _require_nchw(x, "sum_spatial")
    h, w = x.shape[2:]

    def bwd(up, need):
        return (replicate_spatial(up, h, w) if need[0] else None,)

    return _record(x.data.sum(axis=(2, 3)), (x,), bwd, "sum_spatial")


def sum_channels(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,1,H,W)."""
    _require_nchw(x, "sum_channels")
    c = x.shape[1]

    def bwd(up, need):
        return (expand_channels(up, c) if need[0] else None,)

    return _record(x.data.sum(axis=1, keepdims=True), (x,), bwd, "sum_channels")


def expand_channels(x: Tensor, channels: int) -> Tensor:
    """(N,1,H,W) -> (N,C,H,W)."""
    _require_nchw(x, "expand_channels")
    if x.shape[1] != 1:
        raise AutogradError("expand_channels expects a singleton channel")
    n, _, h, w = x.shape
    data = np.ascontiguousarray(np.broadcast_to(x.data, (n, channels, h, w)))

    def bwd(up, need):
        return (sum_channels(up) if need[0] else None,)

    return _record(data, (x,), bwd, "expand_channels")


def expand_batch(c: Tensor, n: int) -> Tensor:
    """(C,) -> (N,C)."""
    if len(c.shape) != 1:
        raise AutogradError(f"expand_batch expects (C,), got {c.shape}")
    data = np.ascontiguousarray(np.broadcast_to(c.data[None, :], (n,) + c.shape))

    def bwd(up, need):
        return (sum_batch(up) if need[0] else None,)

    return _record(data, (c,), bwd, "expand_batch")


def sum_batch(x: Tensor) -> Tensor:
    """(N,C) -> (C,)."""
    if len(x.shape) != 2:
        raise AutogradError(f"sum_batch expects (N,C), got {x.shape}")
    n = x.shape[0]

    def bwd(up, need):
        return (expand_batch(up, n) if need[0] else None,)

    return _record(x.data.sum(axis=0), (x,), bwd, "sum_batch")


def expand_nhw(c: Tensor, n: int, h: int, w: int) -> Tensor:
    """(C,) -> (N,C,H,W); used to apply per-channel biases."""
    if len(c.shape) != 1:
        raise AutogradError(f"expand_nhw expects (C,), got {c.shape}")
    data = np.ascontiguousarray(np.broadcast_to(c.data[None, :, None, None], (n, c.shape[0], h, w)))

    def bwd(up, need):
        return (sum_nhw(up) if need[0] else None,)

    return _record(data, (c,), bwd, "expand_nhw")


def sum_nhw(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (C,)."""
    _require_nchw(x, "sum_nhw")
    n, _, h, w = x.shape

    def bwd(up, need):
        return (expand_nhw(up, n, h, w) if need[0] else None,)

    return _record(x.data.sum(axis=(0, 2, 3)), (x,), bwd, "sum_nhw")


def sum_per_sample(x: Tensor) -> Tensor:
    """(N, ...) -> (N,), summing everything but the batch axis."""
    if len(x.shape) < 2:
        raise AutogradError(f"sum_per_sample expects a batched tensor, got {x.shape}")
    n = x.shape[0]
    shape = x.shape

    def bwd(up, need):
        return (broadcast_per_sample(up, shape) if need[0] else None,)

    return _record(x.data.reshape(n, -1).sum(axis=1), (x,), bwd, "sum_per_sample")


def broadcast_per_sample(v: Tensor, shape: tuple[int, ...]) -> Tensor:
    """(N,) -> shape, repeating each sample's value."""
    if len(v.shape) != 1 or v.shape[0] != shape[0]:
        raise AutogradError(f"broadcast_per_sample: {v.shape} vs target {shape}")
    view = v.data.reshape((shape[0],) + (1,) * (len(shape) - 1))
    data = np.ascontiguousarray(np.broadcast_to(view, shape))

    def bwd(up, need):
        return (sum_per_sample(up) if need[0] else None,)

    return _record(data, (v,), bwd, "broadcast_per_sample")


def sum_all(x: Tensor) -> Tensor:
    """Reduce to a 0-d scalar tensor."""
    shape = x.shape

    def bwd(up, need):
        return (expand_scalar(up, shape) if need[0] else None,)

    return _record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bwd, "sum_all")


def expand_scalar(s: Tensor, shape: tuple[int, ...]) -> Tensor:
    if s.shape != ():
        raise AutogradError(f"expand_scalar expects a 0-d tensor, got {s.shape}")
    data = np.full(shape, s.data, dtype=s.dtype)

    def bwd(up, need):
        return (sum_all(up) if need[0] else None,)

    return _record(data, (s,), bwd, "expand_scalar")


# ---------------------------------------------------------------------------
# reductions built from primitives
# ---------------------------------------------------------------------------

def mean_all(x: Tensor) -> Tensor:
    return scalar_mul(sum_all(x), 1.0 / x.numel)


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if a.shape != b.shape:
        raise AutogradError(f"l1_mean: shape mismatch {a.shape} vs {b.shape}")
    return mean_all(absolute(sub(a, b)))


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise ValueError(f"shape extents must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape), dtype), requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(_check_shape(shape), dtype), requires_grad)


def full(shape, value: float, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"fill value must be finite, got {value}")
    return Tensor(np.full(_check_shape(shape), value, dtype), requires_grad)


def uniform(shape, lo: float, hi: float, seed: int, dtype=np.float32,
            requires_grad: bool = False) -> Tensor:
    shape = _check_shape(shape)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"bad uniform range [{lo}, {hi}]")
    gen = rng.stream(seed, rng.UNIFORM_FILL)
    data = gen.uniform(lo, hi, size=shape).astype(dtype)
    return Tensor(data, requires_grad)


def xavier_init(fan_in: int, fan_out: int, shape, seed: int, dtype=np.float32,
                requires_grad: bool = False) -> Tensor:
    """Uniform init on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be >= 1, got ({fan_in}, {fan_out})")
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return uniform(shape, -bound, bound, seed, dtype, requires_grad)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

class GradMap:
    """Gradients keyed by tensor identity; an absent entry means zero."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: dict[int, tuple[Tensor, Tensor]] = {}

    def _set(self, t: Tensor, g: Tensor) -> None:
        self._entries[id(t)] = (t, g)

    def grad(self, t: Tensor) -> Tensor:
        entry = self._entries.get(id(t))
        if entry is None:
            raise KeyError("tensor was not passed to backward(wrt=...)")
        return entry[1]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return iter(self._entries.values())


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # inputs before the tensors computed from them


def backward(loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> GradMap:
    """Reverse-mode gradients of a scalar ``loss`` for every tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are themselves
    recorded and can be differentiated again. Tensors in ``wrt`` that are
    not reachable from ``loss`` get an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise AutogradError(f"backward requires a scalar loss, got shape {loss.shape}")
    wrt = list(wrt)
    order = _topo_order(loss)

    wrt_ids = {id(t) for t in wrt}
    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in wrt_ids or any(
            needed.get(id(p), False) for p in node._parents
        )

    grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            up = grads.get(id(node))
            if up is None or node._bwd is None:
                continue
            need = tuple(needed.get(id(p), False) for p in node._parents)
            if not any(need):
                continue
            parent_grads = node._bwd(up, need)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                if pg.shape != p.shape:
                    raise AutogradError(
                        f"backward rule of '{node._op}' produced shape {pg.shape} "
                        f"for parent of shape {p.shape}"
                    )
                cur = grads.get(id(p))
                grads[id(p)] = pg if cur is None else add(cur, pg)

    out = GradMap()
    for t in wrt:
        g = grads.get(id(t))
        out._set(t, g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


def finite_diff_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central finite-difference gradient of scalar ``f`` at ``x``, in float64.

    ``f`` is evaluated with recording left as-is: probe functions that
    internally call :func:`backward` (e.g. gradient penalties) still work.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = x.data.astype(np.float64).copy()
    flat = base.reshape(-1)
    out = np.zeros_like(flat)

    def evaluate() -> float:
        val = f(Tensor(base))
        if not isinstance(val, Tensor) or val.data.size != 1:
            raise AutogradError("finite_diff_gradient requires a scalar-valued function")
        return float(val.data.reshape(()))

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = evaluate()
        flat[i] = orig - h
        fm = evaluate()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(base.shape))
