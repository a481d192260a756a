"""Dense tensors with a reverse-mode tape.

Every differentiable op produces a new :class:`Tensor` holding a reference to
its parents and a backward closure mapping the output gradient to one gradient
per parent. Tracked tensors are never mutated in place; parameters are leaves
and are only updated by the optimizer between tapes.
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

# grad mode and dtype are per thread: a tape is confined to the thread that records it
_state = threading.local()
_trackers: List["AllocationTracker"] = []
_trackers_lock = threading.Lock()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def get_default_dtype() -> np.dtype:
    return np.dtype(getattr(_state, "dtype", np.float32))


@contextlib.contextmanager
def use_dtype(dtype: Any) -> Iterator[None]:
    """Select the float type for tensors and parameters created in the block.

    float32 is the default for model execution; float64 is used by the
    finite-difference gradient checks.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    previous = getattr(_state, "dtype", np.float32)
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


class AllocationTracker:
    """Accounts the buffers of tensors created while the tracker is active.

    Each tensor allocated inside the ``with`` block adds its byte size to
    ``live_bytes``; the bytes are returned when the tensor is garbage
    collected, even after the block has exited. ``peak_bytes`` never
    decreases except through :meth:`reset_peak`.
    """

    def __init__(self) -> None:
        self.live_bytes = 0
        self.peak_bytes = 0
        self._lock = threading.Lock()

    def __enter__(self) -> "AllocationTracker":
        with _trackers_lock:
            _trackers.append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        with _trackers_lock:
            if self in _trackers:
                _trackers.remove(self)

    def reset_peak(self) -> None:
        with self._lock:
            self.peak_bytes = self.live_bytes

    def _allocate(self, nbytes: int) -> None:
        with self._lock:
            self.live_bytes += nbytes
            if self.live_bytes > self.peak_bytes:
                self.peak_bytes = self.live_bytes

    def _release(self, nbytes: int) -> None:
        with self._lock:
            self.live_bytes -= nbytes

    def __repr__(self) -> str:
        return f"AllocationTracker(live_bytes={self.live_bytes}, peak_bytes={self.peak_bytes})"


def _release_to(trackers: Tuple[AllocationTracker, ...], nbytes: int) -> None:
    for tracker in trackers:
        tracker._release(nbytes)


def _register_allocation(tensor: "Tensor") -> None:
    if not _trackers:
        return
    with _trackers_lock:
        active = tuple(_trackers)
    nbytes = int(tensor.data.nbytes)
    for tracker in active:
        tracker._allocate(nbytes)
    weakref.finalize(tensor, _release_to, active, nbytes)


def _contiguous(array: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d arrays to 1-d
    return array if array.flags.c_contiguous else np.ascontiguousarray(array)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_advanced_index(index: Any) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def _normalize_index(index: Any) -> Any:
    if isinstance(index, Tensor):
        return index.data.astype(np.intp)
    if isinstance(index, tuple):
        return tuple(i.data.astype(np.intp) if isinstance(i, Tensor) else i for i in index)
    return index


class Tensor:
    """An n-dimensional float array, optionally recorded on the tape.

    Row-major, contiguous ``data``; ``grad`` is populated by :meth:`backward`
    for every tensor on the path to the loss that requires gradients.
    """

    __array_priority__ = 1000

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None):
        if isinstance(data, Tensor):
            data = data.data
        target = np.dtype(dtype) if dtype is not None else get_default_dtype()
        self.data: np.ndarray = _contiguous(np.asarray(data, dtype=target))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._consumed = False
        _register_allocation(self)

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Wrap the result of an op, recording it on the tape when needed."""
        out = cls.__new__(cls)
        out.data = _contiguous(np.asarray(data))
        needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs_grad
        out.grad = None
        out._parents = tuple(parents) if needs_grad else ()
        out._backward = backward if needs_grad else None
        out._op = op
        out._consumed = False
        _register_allocation(out)
        return out

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- reverse mode ----------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every tracked ancestor of this tensor.

        Without ``retain_graph`` the tape is consumed: closures and parent
        links are dropped and a second call raises ``RuntimeError``.
        """
        if self._consumed:
            raise RuntimeError(
                "graph was consumed by a previous backward(); pass retain_graph=True to reuse it"
            )
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad and has no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.array(g, dtype=node.data.dtype) if node.grad is None else node.grad + g
                continue
            node.grad = g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.data.dtype)
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
            if not retain_graph:
                node._parents = ()
                node._backward = None
                node._consumed = True

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype), dtype=self.data.dtype)

    def __add__(self, other: Any) -> "Tensor":
        other = self._coerce(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor.from_op(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        other = self._coerce(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor.from_op(self.data - other.data, (self, other), backward, "sub")

    def __rsub__(self, other: Any) -> "Tensor":
        return self._coerce(other) - self

    def __mul__(self, other: Any) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor.from_op(a * b, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor.from_op(a / b, (self, other), backward, "div")

    def __rtruediv__(self, other: Any) -> "Tensor":
        return self._coerce(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        p = float(exponent)

        def backward(g):
            return (g * p * a ** (p - 1.0),)

        return Tensor.from_op(a**p, (self,), backward, "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # -- elementwise -------------------------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.log(a), (self,), lambda g: (g / a,), "log")

    def sigmoid(self) -> "Tensor":
        s = expit(self.data)
        return Tensor.from_op(s, (self,), lambda g: (g * s * (1.0 - s),), "sigmoid")

    def silu(self) -> "Tensor":
        a = self.data
        s = expit(a)

        def backward(g):
            return (g * (s + a * s * (1.0 - s)),)

        return Tensor.from_op(a * s, (self,), backward, "silu")

    def softplus(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.logaddexp(0.0, a), (self,), lambda g: (g * expit(a),), "softplus")

    # -- reductions --------------------------------------------------------
    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape),)

        return Tensor.from_op(
            np.asarray(self.data.sum(axis=axes, keepdims=keepdims)), (self,), backward, "sum"
        )

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    # -- shape -------------------------------------------------------------
    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(original),), "reshape"
        )

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),), "transpose"
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def flip(self, axis: int) -> "Tensor":
        return Tensor.from_op(
            np.flip(self.data, axis=axis), (self,), lambda g: (np.flip(g, axis=axis),), "flip"
        )

    def expand(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor.from_op(
            np.array(np.broadcast_to(self.data, shape)),
            (self,),
            lambda g: (_unbroadcast(g, original),),
            "expand",
        )

    def __getitem__(self, index: Any) -> "Tensor":
        index = _normalize_index(index)
        shape = self.shape
        advanced = _is_advanced_index(index)

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            if advanced:
                np.add.at(full, index, g)
            else:
                full[index] = g
            return (full,)

        return Tensor.from_op(np.array(self.data[index]), (self,), backward, "getitem")


def _normalize_axes(axis: Any, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched contraction over the last axis of ``a`` and second-to-last of ``b``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape} @ {b.shape} "
            f"(inner extents {a.shape[-1]} != {b.shape[-2]})"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ValueError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from e
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor.from_op(out, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(out, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, tuple(tensors), backward, "stack")


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; indices must not repeat along that axis."""
    indices = np.asarray(indices, dtype=np.intp)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, indices, g, axis=axis)
        return (full,)

    return Tensor.from_op(np.take_along_axis(x.data, indices, axis=axis), (x,), backward, "gather")


def zeros(shape: Sequence[int], dtype: Any = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), dtype=dtype)


def tensor(data: Any, requires_grad: bool = False, dtype: Any = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


__all__ = [
    "AllocationTracker",
    "Tensor",
    "concat",
    "get_default_dtype",
    "is_grad_enabled",
    "matmul",
    "no_grad",
    "stack",
    "take_along_axis",
    "tensor",
    "use_dtype",
    "zeros",
]
