# cython: language_level=3
"""Compiled kernel backend.

Same API as ``_numpy``: C-contiguous float64 in, fresh C-contiguous float64
out.  Broadcasting and reductions walk the arrays with a stride odometer so
arbitrary (trailing-aligned) broadcast shapes work without materializing
intermediates.  Accumulation order is plain row-major, so results are
deterministic across calls.
"""

import numpy as np

from libc.math cimport exp as c_exp, log as c_log, sqrt as c_sqrt, tanh as c_tanh

NAME = "cython"

cdef int MAXND = 8

cdef int OP_ADD = 0
cdef int OP_SUB = 1
cdef int OP_MUL = 2
cdef int OP_DIV = 3


cdef inline double _binop(int op, double x, double y) nogil:
    if op == OP_ADD:
        return x + y
    elif op == OP_SUB:
        return x - y
    elif op == OP_MUL:
        return x * y
    return x / y


cdef inline object _asarr(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise binary with broadcasting

cdef void _binary_same(double[::1] a, double[::1] b, double[::1] out, int op) nogil:
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(n):
        out[i] = _binop(op, a[i], b[i])


cdef void _binary_bcast(double[::1] a, double[::1] b, double[::1] out,
                        Py_ssize_t nd, Py_ssize_t* shape,
                        Py_ssize_t* sa, Py_ssize_t* sb, int op) nogil:
    cdef Py_ssize_t idx[8]
    cdef Py_ssize_t i, d, ia = 0, ib = 0, n = 1
    for d in range(nd):
        idx[d] = 0
        n *= shape[d]
    for i in range(n):
        out[i] = _binop(op, a[ia], b[ib])
        d = nd - 1
        while d >= 0:
            idx[d] += 1
            ia += sa[d]
            ib += sb[d]
            if idx[d] < shape[d]:
                break
            idx[d] = 0
            ia -= sa[d] * shape[d]
            ib -= sb[d] * shape[d]
            d -= 1


cdef object _binary(object a0, object b0, int op):
    cdef object a = _asarr(a0)
    cdef object b = _asarr(b0)
    if a.shape == b.shape:
        out_same = np.empty_like(a)
        _binary_same(a.ravel(), b.ravel(), out_same.ravel(), op)
        return out_same

    out_shape = np.broadcast_shapes(a.shape, b.shape)
    cdef Py_ssize_t nd = len(out_shape)
    if nd > MAXND:
        raise ValueError(f"rank {nd} exceeds kernel limit {MAXND}")
    out = np.empty(out_shape, dtype=np.float64)

    cdef Py_ssize_t shape_c[8]
    cdef Py_ssize_t sa_c[8]
    cdef Py_ssize_t sb_c[8]
    _fill_bcast_strides(a.shape, out_shape, sa_c)
    _fill_bcast_strides(b.shape, out_shape, sb_c)
    cdef Py_ssize_t d
    for d in range(nd):
        shape_c[d] = out_shape[d]
    _binary_bcast(a.ravel(), b.ravel(), out.ravel(), nd, shape_c, sa_c, sb_c, op)
    return out


cdef void _fill_bcast_strides(object in_shape, object out_shape, Py_ssize_t* strides):
    """Element strides of a contiguous array of in_shape, viewed at out_shape.

    Missing leading axes and axes of size 1 get stride 0.
    """
    cdef Py_ssize_t nd_out = len(out_shape)
    cdef Py_ssize_t nd_in = len(in_shape)
    cdef Py_ssize_t offset = nd_out - nd_in
    cdef Py_ssize_t d, acc = 1
    for d in range(nd_out):
        strides[d] = 0
    for d in range(nd_in - 1, -1, -1):
        if in_shape[d] == 1:
            strides[offset + d] = 0
        else:
            strides[offset + d] = acc
        acc *= in_shape[d]


def add(a, b):
    return _binary(a, b, OP_ADD)


def sub(a, b):
    return _binary(a, b, OP_SUB)


def mul(a, b):
    return _binary(a, b, OP_MUL)


def div(a, b):
    return _binary(a, b, OP_DIV)


# ---------------------------------------------------------------------------
# elementwise unary

cdef void _unary(double[::1] a, double[::1] out, int kind) nogil:
    cdef Py_ssize_t i, n = out.shape[0]
    if kind == 0:
        for i in range(n):
            out[i] = -a[i]
    elif kind == 1:
        for i in range(n):
            out[i] = c_exp(a[i])
    elif kind == 2:
        for i in range(n):
            out[i] = c_log(a[i])
    elif kind == 3:
        for i in range(n):
            out[i] = c_sqrt(a[i])
    elif kind == 4:
        for i in range(n):
            out[i] = c_tanh(a[i])
    else:
        for i in range(n):
            out[i] = 1.0 / (1.0 + c_exp(-a[i]))


cdef object _unary_op(object a0, int kind):
    a = _asarr(a0)
    out = np.empty_like(a)
    _unary(a.ravel(), out.ravel(), kind)
    return out


def neg(a):
    return _unary_op(a, 0)


def exp(a):
    return _unary_op(a, 1)


def log(a):
    return _unary_op(a, 2)


def sqrt(a):
    return _unary_op(a, 3)


def tanh(a):
    return _unary_op(a, 4)


def sigmoid(a):
    return _unary_op(a, 5)


def clip(a, lo, hi):
    arr = _asarr(a)
    out = np.empty_like(arr)
    cdef double[::1] av = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef double lo_c = lo, hi_c = hi, x
    cdef Py_ssize_t i, n = av.shape[0]
    with nogil:
        for i in range(n):
            x = av[i]
            if x < lo_c:
                x = lo_c
            elif x > hi_c:
                x = hi_c
            ov[i] = x
    return out


# ---------------------------------------------------------------------------
# reductions

cdef void _reduce(double[::1] a, double[::1] out, Py_ssize_t nd,
                  Py_ssize_t* shape, Py_ssize_t* so) nogil:
    cdef Py_ssize_t idx[8]
    cdef Py_ssize_t i, d, io = 0, n = 1
    for d in range(nd):
        idx[d] = 0
        n *= shape[d]
    for i in range(n):
        out[io] += a[i]
        d = nd - 1
        while d >= 0:
            idx[d] += 1
            io += so[d]
            if idx[d] < shape[d]:
                break
            idx[d] = 0
            io -= so[d] * shape[d]
            d -= 1


def reduce_sum(a, axes, keepdims):
    arr = _asarr(a)
    cdef Py_ssize_t nd = arr.ndim
    if nd == 0:
        return arr.copy()
    if nd > MAXND:
        raise ValueError(f"rank {nd} exceeds kernel limit {MAXND}")
    if axes is None:
        axes = tuple(range(nd))
    ax = sorted(int(x) % nd for x in axes)
    keep_shape = tuple(1 if d in ax else s for d, s in enumerate(arr.shape))
    out = np.zeros(keep_shape, dtype=np.float64)

    cdef Py_ssize_t shape_c[8]
    cdef Py_ssize_t so_c[8]
    cdef Py_ssize_t d, acc = 1
    for d in range(nd):
        shape_c[d] = arr.shape[d]
    for d in range(nd - 1, -1, -1):
        if keep_shape[d] == 1:
            so_c[d] = 0
        else:
            so_c[d] = acc
        acc *= keep_shape[d]
    _reduce(arr.ravel(), out.ravel(), nd, shape_c, so_c)
    if not keepdims:
        out = out.reshape(tuple(s for d, s in enumerate(arr.shape) if d not in ax))
    return out


# ---------------------------------------------------------------------------
# shape ops

def broadcast_to(a, shape):
    arr = _asarr(a)
    shape = tuple(shape)
    cdef Py_ssize_t nd = len(shape)
    if nd > MAXND:
        raise ValueError(f"rank {nd} exceeds kernel limit {MAXND}")
    out = np.empty(shape, dtype=np.float64)
    cdef Py_ssize_t shape_c[8]
    cdef Py_ssize_t sa_c[8]
    cdef Py_ssize_t d
    for d in range(nd):
        shape_c[d] = shape[d]
    _fill_bcast_strides(arr.shape, shape, sa_c)
    _copy_strided(arr.ravel(), out.ravel(), nd, shape_c, sa_c)
    return out


cdef void _copy_strided(double[::1] a, double[::1] out, Py_ssize_t nd,
                        Py_ssize_t* shape, Py_ssize_t* sa) nogil:
    cdef Py_ssize_t idx[8]
    cdef Py_ssize_t i, d, ia = 0, n = 1
    for d in range(nd):
        idx[d] = 0
        n *= shape[d]
    for i in range(n):
        out[i] = a[ia]
        d = nd - 1
        while d >= 0:
            idx[d] += 1
            ia += sa[d]
            if idx[d] < shape[d]:
                break
            idx[d] = 0
            ia -= sa[d] * shape[d]
            d -= 1


def permute(a, axes):
    arr = _asarr(a)
    axes = tuple(int(x) for x in axes)
    cdef Py_ssize_t nd = arr.ndim
    if sorted(axes) != list(range(nd)):
        raise ValueError(f"invalid permutation {axes} for rank {nd}")
    if nd > MAXND:
        raise ValueError(f"rank {nd} exceeds kernel limit {MAXND}")
    out_shape = tuple(arr.shape[x] for x in axes)
    out = np.empty(out_shape, dtype=np.float64)

    # element strides of the input, reordered to output axis order
    in_strides = [0] * nd
    cdef Py_ssize_t d, acc = 1
    for d in range(nd - 1, -1, -1):
        in_strides[d] = acc
        acc *= arr.shape[d]
    cdef Py_ssize_t shape_c[8]
    cdef Py_ssize_t sa_c[8]
    for d in range(nd):
        shape_c[d] = out_shape[d]
        sa_c[d] = in_strides[axes[d]]
    _copy_strided(arr.ravel(), out.ravel(), nd, shape_c, sa_c)
    return out


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b):
    arr_a = _asarr(a)
    arr_b = _asarr(b)
    if arr_a.ndim != 2 or arr_b.ndim != 2:
        raise ValueError("matmul kernel expects 2-d operands")
    cdef Py_ssize_t m = arr_a.shape[0]
    cdef Py_ssize_t k = arr_a.shape[1]
    cdef Py_ssize_t n = arr_b.shape[1]
    if arr_b.shape[0] != k:
        raise ValueError("matmul kernel inner dimension mismatch")
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[::1] av = arr_a.ravel()
    cdef double[::1] bv = arr_b.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, j, kk
    cdef double aik
    with nogil:
        for i in range(m):
            for kk in range(k):
                aik = av[i * k + kk]
                for j in range(n):
                    ov[i * n + j] += aik * bv[kk * n + j]
    return out
