"""Reverse-mode autodiff over flat float64 arrays.

A Tensor wraps a C-contiguous float64 ndarray plus a requires_grad flag.
Every op records its parents and a backward closure; ``backward()`` on a
scalar root does one DFS topological sort and replays it in reverse,
invoking each closure exactly once.  Gradients are accumulated in a dict
keyed by node identity while the tape runs and are only deposited onto
leaf tensors (nodes with requires_grad and no parents), where they add
into ``.grad`` across repeated backward calls.

All numeric work goes through the kernel backend in ``dualstream.kernels``
so the compiled and pure-python paths share this file unchanged.
Broadcasting is numpy-style (trailing dimensions aligned).  Replay order
is fixed by the recorded tape, so repeated backward passes over the same
graph are bitwise identical.
"""

import numpy as np

from . import kernels as K
from .errors import DomainError, DualstreamError, NonFiniteError, ShapeError

MAX_RANK = 8


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise NonFiniteError(
            f"{where}: non-finite value {arr.ravel()[bad]!r} at flat index {bad}"
        )


def _broadcast_shape(sa, sb, op_name):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{op_name}: cannot broadcast shapes {sa} and {sb}") from None


def _unbroadcast(g, shape):
    """Sum a gradient of broadcast shape back down to ``shape``."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        extra + i for i, s in enumerate(shape) if s == 1 and g.shape[extra + i] != 1
    )
    if axes:
        g = K.reduce_sum(g, axes, True)
    return np.ascontiguousarray(g.reshape(shape))


def _normalize_axes(axes, ndim, op_name):
    if axes is None:
        axes = tuple(range(ndim))
    elif isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    else:
        axes = tuple(int(a) for a in axes)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{op_name}: axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"{op_name}: duplicate axes {tuple(axes)}")
    return tuple(sorted(norm))


def _add_to(grads, t, g):
    # out-of-place accumulation; stored arrays are never mutated afterwards
    if not t.requires_grad:
        return
    key = id(t)
    if key in grads:
        grads[key] = K.add(grads[key], g)
    else:
        grads[key] = g


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensor rank {arr.ndim} exceeds limit {MAX_RANK}")
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents):
        """Internal: wrap an op result without re-validating. Keeps the graph
        only when some parent needs gradients."""
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = any(p.requires_grad for p in parents)
        t._grad = None
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = None
        return t

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        # leaves read as zero-grad until something reaches them
        if self._grad is None and self.requires_grad:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        self._grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """A new leaf with the same values and no history."""
        t = Tensor.__new__(Tensor)
        t.data = self.data.copy()
        t.requires_grad = False
        t._grad = None
        t._parents = ()
        t._backward = None
        return t

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- elementwise binary ---------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        _broadcast_shape(self.shape, other.shape, "add")
        out = Tensor._from_op(K.add(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self, other

            def bwd(g, grads):
                _add_to(grads, a, _unbroadcast(g, a.shape))
                _add_to(grads, b, _unbroadcast(g, b.shape))

            out._backward = bwd
        return out

    def __sub__(self, other):
        other = _as_tensor(other)
        _broadcast_shape(self.shape, other.shape, "sub")
        out = Tensor._from_op(K.sub(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self, other

            def bwd(g, grads):
                _add_to(grads, a, _unbroadcast(g, a.shape))
                _add_to(grads, b, _unbroadcast(K.neg(g), b.shape))

            out._backward = bwd
        return out

    def __mul__(self, other):
        other = _as_tensor(other)
        _broadcast_shape(self.shape, other.shape, "mul")
        out = Tensor._from_op(K.mul(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self, other

            def bwd(g, grads):
                _add_to(grads, a, _unbroadcast(K.mul(g, b.data), a.shape))
                _add_to(grads, b, _unbroadcast(K.mul(g, a.data), b.shape))

            out._backward = bwd
        return out

    def __truediv__(self, other):
        other = _as_tensor(other)
        _broadcast_shape(self.shape, other.shape, "div")
        out = Tensor._from_op(K.div(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self, other
            out_data = out.data

            def bwd(g, grads):
                _add_to(grads, a, _unbroadcast(K.div(g, b.data), a.shape))
                # d/db (a/b) = -(a/b)/b
                gb = K.neg(K.div(K.mul(g, out_data), b.data))
                _add_to(grads, b, _unbroadcast(gb, b.shape))

            out._backward = bwd
        return out

    def __radd__(self, other):
        return _as_tensor(other).__add__(self)

    def __rsub__(self, other):
        return _as_tensor(other).__sub__(self)

    def __rmul__(self, other):
        return _as_tensor(other).__mul__(self)

    def __rtruediv__(self, other):
        return _as_tensor(other).__truediv__(self)

    def __neg__(self):
        out = Tensor._from_op(K.neg(self.data), (self,))
        if out.requires_grad:
            a = self

            def bwd(g, grads):
                _add_to(grads, a, K.neg(g))

            out._backward = bwd
        return out

    # -- matmul ---------------------------------------------------------------

    def __matmul__(self, other):
        other = _as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(
                f"matmul needs 2-d operands, got {self.shape} and {other.shape}"
            )
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions disagree for {self.shape} and {other.shape}"
            )
        out = Tensor._from_op(K.matmul(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self, other

            def bwd(g, grads):
                _add_to(grads, a, K.matmul(g, K.permute(b.data, (1, 0))))
                _add_to(grads, b, K.matmul(K.permute(a.data, (1, 0)), g))

            out._backward = bwd
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        axes = _normalize_axes(axis, self.ndim, "sum")
        out = Tensor._from_op(K.reduce_sum(self.data, axes, keepdims), (self,))
        if out.requires_grad:
            a = self
            keep_shape = tuple(
                1 if d in axes else s for d, s in enumerate(a.shape)
            )

            def bwd(g, grads):
                gk = np.ascontiguousarray(g.reshape(keep_shape))
                _add_to(grads, a, K.broadcast_to(gk, a.shape))

            out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        axes = _normalize_axes(axis, self.ndim, "mean")
        n = 1
        for d in axes:
            n *= self.shape[d]
        if n == 0:
            raise ShapeError(f"mean over empty axes {axes} of shape {self.shape}")
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / n)

    def var(self, axis=None, keepdims=False):
        """Biased variance: mean of squared deviation from the mean."""
        axes = _normalize_axes(axis, self.ndim, "var")
        m = self.mean(axis=axes, keepdims=True)
        d = self - m
        return (d * d).mean(axis=axes, keepdims=keepdims)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        shape = tuple(int(s) for s in shape)
        n = 1
        for s in shape:
            n *= s
        if n != self.size:
            raise ShapeError(f"cannot reshape {self.shape} to {shape}")
        if len(shape) > MAX_RANK:
            raise ShapeError(f"reshape rank {len(shape)} exceeds limit {MAX_RANK}")
        out = Tensor._from_op(
            np.ascontiguousarray(self.data.reshape(shape)), (self,)
        )
        if out.requires_grad:
            a = self

            def bwd(g, grads):
                _add_to(grads, a, np.ascontiguousarray(g.reshape(a.shape)))

            out._backward = bwd
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.ndim - 1, -1, -1))
        axes = tuple(int(a) for a in axes)
        if sorted(axes) != list(range(self.ndim)):
            raise ShapeError(f"invalid permutation {axes} for shape {self.shape}")
        out = Tensor._from_op(K.permute(self.data, axes), (self,))
        if out.requires_grad:
            a = self
            inv = tuple(np.argsort(axes))

            def bwd(g, grads):
                _add_to(grads, a, K.permute(g, inv))

            out._backward = bwd
        return out

    def broadcast_to(self, shape):
        shape = tuple(int(s) for s in shape)
        if _broadcast_shape(self.shape, shape, "broadcast_to") != shape:
            raise ShapeError(f"cannot broadcast {self.shape} to {shape}")
        out = Tensor._from_op(K.broadcast_to(self.data, shape), (self,))
        if out.requires_grad:
            a = self

            def bwd(g, grads):
                _add_to(grads, a, _unbroadcast(g, a.shape))

            out._backward = bwd
        return out

    # -- autodiff driver ------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar root, got shape {self.shape}"
            )
        if not self.requires_grad:
            raise DualstreamError("backward() on a tensor that does not require grad")

        # iterative DFS; recursion would overflow on long op chains
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                node._backward(g, grads)
            elif node.requires_grad and not node._parents:
                if node._grad is None:
                    node._grad = np.zeros_like(node.data)
                node._grad = K.add(node._grad, g)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(data):
    """A tensor that never takes gradients (weights for masking, targets)."""
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# unary math (module-level, mirroring the kernel set)


def exp(x):
    out = Tensor._from_op(K.exp(x.data), (x,))
    if out.requires_grad:
        out_data = out.data

        def bwd(g, grads):
            _add_to(grads, x, K.mul(g, out_data))

        out._backward = bwd
    return out


def log(x):
    if np.min(x.data) <= 0.0:
        raise DomainError(
            f"log of non-positive value {np.min(x.data)!r}; clamp first"
        )
    out = Tensor._from_op(K.log(x.data), (x,))
    if out.requires_grad:

        def bwd(g, grads):
            _add_to(grads, x, K.div(g, x.data))

        out._backward = bwd
    return out


def sqrt(x):
    if np.min(x.data) <= 0.0:
        raise DomainError(
            f"sqrt of non-positive value {np.min(x.data)!r}; clamp first"
        )
    out = Tensor._from_op(K.sqrt(x.data), (x,))
    if out.requires_grad:
        out_data = out.data

        def bwd(g, grads):
            # d sqrt(x)/dx = 1 / (2 sqrt(x))
            _add_to(grads, x, K.div(K.mul(g, np.full_like(out_data, 0.5)), out_data))

        out._backward = bwd
    return out


def tanh(x):
    out = Tensor._from_op(K.tanh(x.data), (x,))
    if out.requires_grad:
        out_data = out.data

        def bwd(g, grads):
            _add_to(grads, x, K.mul(g, K.sub(np.ones_like(out_data), K.mul(out_data, out_data))))

        out._backward = bwd
    return out


def sigmoid(x):
    out = Tensor._from_op(K.sigmoid(x.data), (x,))
    if out.requires_grad:
        out_data = out.data

        def bwd(g, grads):
            one_minus = K.sub(np.ones_like(out_data), out_data)
            _add_to(grads, x, K.mul(g, K.mul(out_data, one_minus)))

        out._backward = bwd
    return out


def clamp(x, lo, hi):
    """Clip values to [lo, hi]; gradient passes through inside the interval
    (inclusive) and is zero outside."""
    if not lo < hi:
        raise DomainError(f"clamp: lo {lo} must be below hi {hi}")
    out = Tensor._from_op(K.clip(x.data, float(lo), float(hi)), (x,))
    if out.requires_grad:
        mask = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)

        def bwd(g, grads):
            _add_to(grads, x, K.mul(g, mask))

        out._backward = bwd
    return out


def softmax(x, axis):
    """Softmax along one axis, computed with the usual max-subtraction."""
    axes = _normalize_axes(axis, x.ndim, "softmax")
    if len(axes) != 1:
        raise ShapeError(f"softmax takes one axis, got {axes}")
    ax = axes[0]
    # subtracting a constant shifts nothing analytically; keep it off the tape
    m = constant(np.max(x.data, axis=ax, keepdims=True))
    e = exp(x - m)
    return e / e.sum(axis=ax, keepdims=True)
