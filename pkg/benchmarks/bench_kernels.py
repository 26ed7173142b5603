"""Micro and macro timing of the two kernel backends.

Micro: each kernel at the array shapes the default pipeline actually
produces (batch 16, 3x12x12 input, 20- and 40-channel stages).  Both
backend modules are imported directly, so one process times both.

Macro: full training steps, one subprocess per backend, because the
autodiff engine binds its backend once at import.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--steps N]
       [--skip-macro]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dualstream.kernels import _numpy

try:
    from dualstream.kernels import _core
except ImportError:
    _core = None

RNG = np.random.default_rng(0)

# shapes seen by the default configuration: input maps, stage maps,
# pooled features, projection matmuls, per-task probability blocks
IMG = RNG.standard_normal((16, 3, 12, 12))
STAGE1 = RNG.standard_normal((16, 20, 12, 12))
STAGE2 = RNG.standard_normal((16, 40, 6, 6))
FEATS = RNG.standard_normal((16, 5, 40))
PROBS = RNG.uniform(0.05, 0.95, size=(16, 5))
MAT_A = RNG.standard_normal((16 * 36, 40))
MAT_B = RNG.standard_normal((40, 24))
BIAS = RNG.standard_normal((1, 40, 1, 1))


def cases():
    return [
        ("add bcast (16,40,6,6)", lambda k: k.add(STAGE2, BIAS)),
        ("mul (16,20,12,12)", lambda k: k.mul(STAGE1, STAGE1)),
        ("div (16,5)", lambda k: k.div(PROBS, PROBS)),
        ("neg (16,3,12,12)", lambda k: k.neg(IMG)),
        ("exp (16,5,40)", lambda k: k.exp(FEATS)),
        ("log (16,5)", lambda k: k.log(PROBS)),
        ("sqrt (16,5)", lambda k: k.sqrt(PROBS)),
        ("tanh (16,5,40)", lambda k: k.tanh(FEATS)),
        ("sigmoid (16,5)", lambda k: k.sigmoid(PROBS)),
        ("clip (16,5)", lambda k: k.clip(PROBS, 1e-7, 1.0 - 1e-7)),
        ("reduce_sum axes=2,3", lambda k: k.reduce_sum(STAGE2, (2, 3), True)),
        ("broadcast (16,40,6,6)", lambda k: k.broadcast_to(BIAS, (16, 40, 6, 6))),
        ("matmul 576x40x24", lambda k: k.matmul(MAT_A, MAT_B)),
        ("permute (16,5,40)", lambda k: k.permute(FEATS, (1, 0, 2))),
    ]


def time_one(fn, repeat):
    fn()  # warm
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def micro(repeat):
    backends = [("numpy", _numpy)]
    if _core is not None:
        backends.append(("cython", _core))
    print(f"{'kernel':<26}" + "".join(f"{n:>12}" for n, _ in backends)
          + ("       ratio" if len(backends) == 2 else ""))
    for label, call in cases():
        times = [time_one(lambda b=mod: call(b), repeat)
                 for _, mod in backends]
        row = f"{label:<26}" + "".join(f"{t * 1e6:>10.2f}us" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>8.2f}x"
        print(row)
    if _core is None:
        print("compiled backend not built; numpy only")


MACRO_SCRIPT = r"""
import time
import numpy as np
from dualstream import kernels
from dualstream.config import default_config
from dualstream.dsu import RandomSource
from dualstream.losses import total_loss
from dualstream.model import TwoStreamModel
from dualstream.optim import Adam
from dualstream.tensor import Tensor
from dualstream.train import resolve_embeddings

steps = int(%d)
run = default_config()
model = TwoStreamModel(run.model, resolve_embeddings(run), init_seed=0)
opt = Adam(model.parameters(), lr=run.train.lr)
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((16, 3, 12, 12)))
labels = rng.choice([1, 0, -1], size=(16, 5), p=[0.4, 0.4, 0.2])
draws = RandomSource(1)
w, f = run.loss.weights(), run.loss.flags()

def step(epoch):
    out = model.forward_train(x, rng=draws)
    loss, _ = total_loss(out.det_probs, out.det_feats, out.pert_probs,
                         out.pert_feats, labels, w, epoch, f)
    opt.zero_grad(); loss.backward(); opt.step()

step(1)  # warm
t0 = time.perf_counter()
for i in range(steps):
    step(7)
print(f"{kernels.BACKEND_NAME} {(time.perf_counter() - t0) / steps:.6f}")
"""


def macro(steps):
    print(f"\nfull training step, batch 16, default model ({steps} steps):")
    rows = []
    for name, env_val in (("cython", None), ("numpy", "1")):
        env = dict(os.environ)
        env.pop("DUALSTREAM_PYKERNELS", None)
        if env_val:
            env["DUALSTREAM_PYKERNELS"] = env_val
        out = subprocess.run([sys.executable, "-c", MACRO_SCRIPT % steps],
                             capture_output=True, text=True, env=env)
        if out.returncode != 0:
            print(f"  {name}: failed\n{out.stderr}")
            continue
        backend, secs = out.stdout.split()
        rows.append((backend, float(secs)))
        print(f"  {backend:<8} {float(secs) * 1e3:8.2f} ms/step")
    if len(rows) == 2 and rows[0][0] != rows[1][0]:
        print(f"  speedup {rows[1][1] / rows[0][1]:.2f}x")
    elif len(rows) == 2:
        print("  compiled backend not built; both runs used numpy")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--skip-macro", action="store_true")
    args = ap.parse_args()
    micro(args.repeat)
    if not args.skip_macro:
        macro(args.steps)


if __name__ == "__main__":
    main()
