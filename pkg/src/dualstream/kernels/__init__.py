"""Numeric kernel backend selection.

All dense-array arithmetic used by the autodiff engine goes through the
small kernel API defined here: elementwise binary ops with broadcasting,
unary maps, axis reductions, 2-d matmul, permutation and broadcast copies.
Two interchangeable backends implement it:

* ``_core`` - Cython extension compiled at install time: plain typed
  loops over contiguous buffers, transcendentals straight from libm.
  The value is auditability, not speed: every kernel is a dozen lines
  you can read top to bottom, with no dispatch machinery between the
  call and the arithmetic.
* ``_numpy`` - numpy fallback, used when the extension was not built or
  when ``DUALSTREAM_PYKERNELS=1`` is set.

``benchmarks/bench_kernels.py`` compares the two.  At this pipeline's
array sizes numpy's SIMD loops win most kernels (scalar-heavy ops like
sigmoid/clip go the other way), so the fallback is not a degraded mode;
results are reproducible within a backend but transcendentals may differ
by 1 ulp across them.
"""

import os

if os.environ.get("DUALSTREAM_PYKERNELS"):
    from . import _numpy as backend
else:
    try:
        from . import _core as backend  # type: ignore[no-redef]
    except ImportError:
        from . import _numpy as backend  # type: ignore[no-redef]

BACKEND_NAME = backend.NAME

add = backend.add
sub = backend.sub
mul = backend.mul
div = backend.div
neg = backend.neg
exp = backend.exp
log = backend.log
sqrt = backend.sqrt
tanh = backend.tanh
sigmoid = backend.sigmoid
clip = backend.clip
reduce_sum = backend.reduce_sum
broadcast_to = backend.broadcast_to
matmul = backend.matmul
permute = backend.permute

KERNEL_NAMES = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "tanh",
    "sigmoid", "clip", "reduce_sum", "broadcast_to", "matmul", "permute",
]
