"""Dense tensors with a reverse-mode tape.

A ``Tensor`` wraps a numpy array.  Operations on tensors that require
gradients append their output to the active ``Tape``; ``backward`` replays
that tape in reverse.  The tape is never pruned implicitly: call
``Tape.clear`` (or use a fresh tape) once per training step.
"""

from __future__ import annotations

import contextlib
import struct
import threading
from pathlib import Path

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "ContractError",
    "Tensor",
    "Tape",
    "tensor_new",
    "as_tensor",
    "backward",
    "grad_check",
    "no_grad",
    "active_tape",
    "concat",
    "stack",
    "where",
    "l1_loss",
    "save_dten",
    "load_dten",
    "write_dten",
    "read_dten",
]


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ContractError(ValueError):
    pass


_state = threading.local()


def _get_state():
    if not hasattr(_state, "tape"):
        _state.tape = Tape()
        _state.grad_enabled = True
    return _state


def active_tape() -> "Tape":
    return _get_state().tape


@contextlib.contextmanager
def no_grad():
    st = _get_state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


class Tape:
    """Ordered record of executed operations.

    Recording order is a valid topological order, so reverse replay visits
    every node after all of its consumers.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor"):
        self.nodes.append(node)

    def clear(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    @contextlib.contextmanager
    def activate(self):
        st = _get_state()
        prev = st.tape
        st.tape = self
        try:
            yield self
        finally:
            st.tape = prev

    def backward(self, loss: "Tensor"):
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._backward is None:
            # loss is itself a leaf
            if loss.requires_grad:
                _accumulate(loss, np.ones_like(loss.data))
            return
        # locate loss on tape; search from the end since it is usually last
        for pos in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[pos] is loss:
                break
        else:
            raise ContractError("loss was not produced by operations recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
        for node in reversed(self.nodes[: pos + 1]):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent._backward is None:
                    if key in leaf_grads:
                        leaf_grads[key] = (parent, leaf_grads[key][1] + pg)
                    else:
                        leaf_grads[key] = (parent, pg)
                elif key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # each leaf written exactly once
        for leaf, g in leaf_grads.values():
            _accumulate(leaf, g)


def _accumulate(leaf: "Tensor", g: np.ndarray):
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad = leaf.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} do not broadcast") from None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")

    # numpy should defer to our reflected operators
    __array_priority__ = 100

    check_finite = True

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        if Tensor.check_finite and not np.isfinite(data.sum()):
            if not np.all(np.isfinite(data)):
                raise NumericError("operation produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        st = _get_state()
        needs = st.grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward_fn
            st.tape.record(out)
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self):
        return self.shape[0]

    # -- arithmetic -------------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self, other

        def bw(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        _broadcast_shape(self.shape, other.shape)
        a, b = self, other

        def bw(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        p = float(p)

        def bw(g):
            return (g * p * a.data ** (p - 1),)

        return Tensor._make(a.data**p, (a,), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions --------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._make(out_data, (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Tensor._make(out_data, (a,), lambda g: (g * 0.5 / out_data,))

    def abs(self):
        a = self
        # sign(0) == 0 gives the zero subgradient at the kink
        return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))

    def sigmoid(self):
        a = self
        out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor._make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))

    def leaky_relu(self, slope: float = 0.1):
        a = self
        pos = a.data >= 0
        out_data = np.where(pos, a.data, slope * a.data)
        return Tensor._make(out_data, (a,), lambda g: (np.where(pos, g, slope * g),))

    def clip(self, lo: float, hi: float):
        a = self
        inside = (a.data >= lo) & (a.data <= hi)
        return Tensor._make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))

    # -- reductions and shape ops -----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            out_data = a.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None
        return Tensor._make(out_data, (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g) if _is_fancy(idx) else full.__setitem__(idx, g)
            return (full,)

        return Tensor._make(np.array(a.data[idx]), (a,), bw)

    def broadcast_to(self, shape):
        a = self
        return Tensor._make(
            np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),)
        )


def _raise_item(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def tensor_new(
    shape,
    init: str = "zeros",
    value: float = 0.0,
    low: float = 0.0,
    high: float = 1.0,
    seed: int | None = None,
    dtype=np.float64,
    requires_grad: bool = False,
) -> Tensor:
    """Allocate a tensor filled with zeros, a constant, or seeded uniforms."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "constant":
        data = np.full(shape, value, dtype=dtype)
    elif init == "uniform":
        rng = np.random.default_rng(seed)
        data = rng.uniform(low, high, size=shape).astype(dtype)
    else:
        raise ContractError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape} incompatible")

    def bw(g):
        ga = gb = None
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * b.data
            if b.requires_grad:
                gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(0)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.ndim > 1 else g @ b.data.T
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out_data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(out_data, tuple(tensors), bw)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def bw(g):
        return _unbroadcast(np.where(mask, g, 0.0), a.shape), _unbroadcast(np.where(mask, 0.0, g), b.shape)

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), bw)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()


def backward(loss: Tensor, tape: Tape | None = None):
    """Populate ``grad`` on every leaf reachable from ``loss``.

    Gradients accumulate across calls; reset them (``zero_grad``) between
    steps.
    """
    (tape or active_tape()).backward(loss)


GRAD_CHECK_FLOOR = 1e-6  # gradients below this are compared absolutely


def grad_check(fn, x: Tensor | list, eps: float = 1e-6, indices=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps the tensor(s) ``x`` to a scalar tensor.  ``indices`` limits
    the comparison to selected flat positions (per tensor) which keeps large
    parameter sets cheap.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError("eps must lie in [1e-7, 1e-3]")
    xs = x if isinstance(x, (list, tuple)) else [x]
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    tape = Tape()
    with tape.activate():
        out = fn(*xs)
        if not np.isfinite(out.data).all():
            raise NumericError("function value is not finite")
        tape.backward(out)
    worst = 0.0
    for k, t in enumerate(xs):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = range(flat.size) if indices is None else indices[k]
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = float(fn(*xs).data)
                flat[i] = orig - eps
                fm = float(fn(*xs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("function value is not finite")
            numeric = (fp - fm) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            denom = max(abs(a), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# -- DTEN binary format -------------------------------------------------------

_MAGIC = b"DTEN"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_dten(fh, arr) -> None:
    arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    code = _CODES[arr.dtype]
    fh.write(_MAGIC)
    fh.write(struct.pack("<II", 1, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(struct.pack("<B", code))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def read_dten(fh) -> np.ndarray:
    head = fh.read(12)
    if len(head) < 12 or head[:4] != _MAGIC:
        raise ContractError("not a DTEN file (bad magic or truncated header)")
    version, rank = struct.unpack("<II", head[4:])
    if version != 1:
        raise ContractError(f"unsupported DTEN version {version}")
    dims_raw = fh.read(8 * rank)
    code_raw = fh.read(1)
    if len(dims_raw) < 8 * rank or len(code_raw) < 1:
        raise ContractError("truncated DTEN header")
    dims = struct.unpack(f"<{rank}Q", dims_raw)
    code = code_raw[0]
    if code not in _DTYPES:
        raise ContractError(f"unknown DTEN dtype code {code}")
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    payload = fh.read(count * dt.itemsize)
    if len(payload) != count * dt.itemsize:
        raise ContractError("truncated DTEN payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def save_dten(path, arr) -> None:
    with open(Path(path), "wb") as fh:
        write_dten(fh, arr)


def load_dten(path) -> np.ndarray:
    with open(Path(path), "rb") as fh:
        return read_dten(fh)
