"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation records a node (parents + vector-Jacobian
closure) stamped with a monotonically increasing sequence number.  The
sequence is the tape: ``backward`` replays the nodes reachable from the
loss in reverse recording order, which is always a valid reverse
topological order because a node can only consume tensors recorded
before it.
"""

from __future__ import annotations

import contextlib
import itertools
import json
import threading
from collections import OrderedDict
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "DimensionError",
    "ContractError",
    "OracleError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "linear",
    "matmul",
    "bmm",
    "permute",
    "relu",
    "sigmoid",
    "softmax",
    "log",
    "exp",
    "concat",
    "dropout",
    "backward",
    "grad_check",
    "save_archive",
    "load_archive",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class OracleError(RuntimeError):
    """The finite-difference oracle cannot be trusted for this function."""


_seq = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense row-major array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_seq", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce_mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    # bypasses __init__: op outputs are already float arrays
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    if getattr(_state, "enabled", True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementary ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def reciprocal(a: Tensor) -> Tensor:
    y = 1.0 / a.data
    return _record(y, (a,), lambda g: (-g * y * y,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (vectors are not promoted)."""
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _record(ad @ bd, (a, b), vjp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[B, n, k] @ [B, k, m]``."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(
        np.matmul(ad, bd),
        (a, b),
        lambda g: (np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)),
    )


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` with ``b`` broadcast over leading dimensions."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} incompatible with weight {W.shape}")
    xd, Wd = x.data, W.data
    y = xd @ Wd
    if b is not None:
        y = y + b.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd.T
        gW = xd.reshape(-1, xd.shape[-1]).T @ g2
        return (gx, gW) if b is None else (gx, gW, g2.sum(axis=0))

    return _record(y, (x, W) if b is None else (x, W, b), vjp)


def transpose(a: Tensor) -> Tensor:
    return _record(a.data.T, (a,), lambda g: (g.T,))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _record(out, (a,), lambda g: (g.reshape(src),))


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    src_shape, dtype = a.shape, a.dtype

    basic = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(i, (int, slice)) for i in idx)
    )

    def vjp(g):
        full = np.zeros(src_shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), vjp)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return _record(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return _record(np.log(d), (x,), lambda g: (g / d,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    if x.shape[axis] < 1:
        raise ContractError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), vjp)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(x.shape) for x in xs)
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _record(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


# reverse pass ---------------------------------------------------------


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        order.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    order.sort(key=lambda t: t._seq, reverse=True)
    return order


def backward(loss: Tensor, store: ParamStore | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``store`` is given, entries the loss does not depend on receive an
    explicit zero gradient so optimizers can treat every entry uniformly.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if store is not None:
        for p in store.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in _reachable(loss):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg


class ParamStore(OrderedDict):
    """Ordered ``name -> Tensor`` collection of trainable parameters."""

    def add(self, name: str, data, dtype=None) -> Tensor:
        if name in self:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self) ^ set(arrays)
        if missing:
            raise ContractError(f"parameter name mismatch: {sorted(missing)}")
        for k, p in self.items():
            if arrays[k].shape != p.shape:
                raise DimensionError(f"{k}: stored shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=p.dtype, copy=True)


KINK_RETRY = 1e-6


def grad_check(
    f: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The gap per coordinate is ``|a - n| / max(1, |a|, |n|)``.  When
    ``max_coords`` is set, that many coordinates are sampled uniformly
    (seeded) from the whole store; otherwise every coordinate is checked.
    Coordinates whose gap exceeds ``KINK_RETRY`` are re-measured with step
    ``eps / 10`` and keep the smaller gap.
    """
    for p in store.values():
        if p.dtype != np.float64:
            raise OracleError(f"grad_check needs float64 parameters; {p.name} is {p.dtype}")
    with no_grad():
        f0, f1 = f().item(), f().item()
    if f0 != f1:
        raise OracleError(f"function is not deterministic: {f0!r} != {f1!r}")

    store.zero_grad()
    backward(f(), store)

    coords = [(name, i) for name, p in store.items() for i in range(p.data.size)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    def central(flat, i, h):
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        return (up - down) / (2 * h)

    def gap(a, n):
        return abs(a - n) / max(1.0, abs(a), abs(n))

    worst = 0.0
    with no_grad():
        for name, i in coords:
            p = store[name]
            flat = p.data.reshape(-1)
            analytic = float(p.grad.reshape(-1)[i])
            err = gap(analytic, central(flat, i, eps))
            if err > KINK_RETRY:
                # a ReLU input within eps of zero bends the secant; a genuine
                # gradient error survives the smaller step, a kink does not
                err = min(err, gap(analytic, central(flat, i, eps / 10)))
            worst = max(worst, err)
    return worst


# checkpoint archive ---------------------------------------------------


def save_archive(path, arrays: dict[str, np.ndarray] | ParamStore) -> None:
    """Write a JSON header line followed by raw little-endian payloads."""
    if isinstance(arrays, ParamStore):
        arrays = arrays.arrays()
    header: dict[str, dict] = {}
    payloads: list[bytes] = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": arr.dtype.name, "byte_offset": offset}
        payloads.append(raw)
        offset += len(raw)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=False).encode("utf-8") + b"\n")
        for raw in payloads:
            fh.write(raw)


def load_archive(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        head = fh.readline()
        body = fh.read()
    try:
        header = json.loads(head.decode("utf-8"))
    except ValueError as exc:
        raise ValueError(f"{path}: malformed archive header") from exc
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, meta in header.items():
        dt = np.dtype(meta["dtype"]).newbyteorder("<")
        shape = tuple(meta["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = meta["byte_offset"]
        end = start + count * dt.itemsize
        if end > len(body):
            raise ValueError(f"{path}: payload for {name!r} is truncated")
        out[name] = np.frombuffer(body[start:end], dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(shape)
    return out

