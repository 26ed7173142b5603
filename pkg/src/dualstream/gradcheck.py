"""Finite-difference gradient verification.

``grad_check`` compares tape gradients of a scalar-valued builder against
central differences, element by element.  The builder must be a pure
function of the parameter values: before differencing, it is evaluated
twice and the two results must agree bitwise, otherwise the check refuses
to run (finite differences on a jittery function measure noise).

Functions with internal sampling or detached teacher quantities are made
pure with a FrozenConstants bank: the first evaluation records every value
produced at a gradient boundary, replay mode feeds the recorded values
back on every later evaluation.  That way the differenced function is
exactly the function the tape differentiated.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GradCheckError, NonDeterministicError


class FrozenConstants:
    """Record/replay store for values that cross a gradient boundary.

    Call sites wrap each boundary value in ``freeze``: in record mode the
    value passes through and is remembered, in replay mode the remembered
    value is returned instead, in call order.  ``begin_eval`` rewinds the
    cursor; the first call after construction records, all later ones
    replay.
    """

    def __init__(self):
        self._values = []
        self._recording = True
        self._cursor = 0
        self._armed = False

    def begin_eval(self):
        if self._armed:
            self._recording = False
        self._armed = True
        self._cursor = 0

    def freeze(self, value):
        value = np.asarray(value, dtype=np.float64)
        if self._recording:
            self._values.append(value.copy())
            return value
        if self._cursor >= len(self._values):
            raise NonDeterministicError(
                f"frozen-constant replay ran past the recorded {len(self._values)} "
                "values; the evaluation took a different path"
            )
        out = self._values[self._cursor]
        self._cursor += 1
        if out.shape != value.shape:
            raise NonDeterministicError(
                f"frozen-constant shape changed between evaluations: recorded "
                f"{out.shape}, got {value.shape}"
            )
        return out

    def finish_eval(self):
        if not self._recording and self._cursor != len(self._values):
            raise NonDeterministicError(
                f"frozen-constant replay used {self._cursor} of "
                f"{len(self._values)} recorded values"
            )


@dataclass
class ParamReport:
    name: str
    checked: int
    max_rel: float
    worst_index: int
    worst_analytic: float
    worst_numeric: float


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    params: list = field(default_factory=list)

    @property
    def max_rel(self):
        return max((p.max_rel for p in self.params), default=0.0)

    @property
    def ok(self):
        return self.max_rel <= self.tol

    def assert_pass(self):
        if not self.ok:
            worst = max(self.params, key=lambda p: p.max_rel)
            raise GradCheckError(
                f"gradient mismatch in '{worst.name}' at flat index "
                f"{worst.worst_index}: analytic {worst.worst_analytic:.6e}, "
                f"numeric {worst.worst_numeric:.6e}, rel {worst.max_rel:.3e} "
                f"(tol {self.tol:.1e})"
            )

    def format(self):
        lines = [f"{'block':<28} {'entries':>7} {'max rel err':>12}  status"]
        for p in self.params:
            status = "ok" if p.max_rel <= self.tol else "FAIL"
            lines.append(f"{p.name:<28} {p.checked:>7} {p.max_rel:>12.3e}  {status}")
        lines.append(f"overall max rel err {self.max_rel:.3e} (tol {self.tol:.1e})")
        return "\n".join(lines)


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(build, params, eps=1e-5, tol=1e-4, max_entries=None, seed=0,
               on_eval_start=None):
    """Check d(build())/d(params) against central differences.

    build: zero-arg callable returning a scalar Tensor; it must read the
        current ``.data`` of the tensors in ``params`` (perturbations are
        written in place).
    params: dict name -> leaf Tensor with requires_grad.
    max_entries: per-parameter cap; entries beyond it are subsampled with
        a seeded rng so the sweep stays cheap on big blocks.
    on_eval_start: hook invoked before every evaluation (used to rewind a
        FrozenConstants bank or reseed a sampler).
    """

    def evaluate():
        if on_eval_start is not None:
            on_eval_start()
        out = build()
        return out

    out = evaluate()
    base = out.item()
    for p in params.values():
        p.zero_grad()
    out.backward()
    analytic = {name: np.array(p.grad, copy=True) for name, p in params.items()}

    probe = evaluate().item()
    if probe != base or np.isnan(base) != np.isnan(probe):
        raise NonDeterministicError(
            f"two evaluations of the same function differ bitwise "
            f"({base!r} vs {probe!r}); freeze its sampled quantities first"
        )

    rng = np.random.default_rng(seed)
    report = GradCheckReport(eps=eps, tol=tol)
    for name, p in params.items():
        flat = p.data.ravel()
        n = flat.shape[0]
        if max_entries is not None and n > max_entries:
            idxs = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idxs = np.arange(n)
        worst = ParamReport(name=name, checked=len(idxs), max_rel=0.0,
                            worst_index=-1, worst_analytic=0.0, worst_numeric=0.0)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate().item()
            flat[i] = orig - eps
            f_minus = evaluate().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = analytic[name].ravel()[i]
            rel = _rel_err(fd, ad)
            if rel > worst.max_rel:
                worst.max_rel = rel
                worst.worst_index = int(i)
                worst.worst_analytic = float(ad)
                worst.worst_numeric = float(fd)
        report.params.append(worst)

    # leave the function in a clean state for the caller
    evaluate()
    return report


def run_gradient_audit(model_cfg, loss_cfg, batch_size=6, epoch=7, eps=1e-5,
                       tol=1e-4, max_entries=None, seed=0, embed_seed=101,
                       data_rng_seed=0):
    """End-to-end check: both streams, all enabled losses, every block.

    Builds a batch of gaussian images with random partial labels, wires a
    FrozenConstants bank through the model and losses so the sampled
    perturbations and all teacher-side constants replay identically, then
    sweeps finite differences over the full parameter set.
    """
    # imported here: this module sits below model/losses in the layering
    from .decoupling import pseudo_text_embeddings
    from .dsu import RandomSource
    from .losses import total_loss
    from .model import TwoStreamModel
    from .tensor import Tensor

    rng = np.random.default_rng(data_rng_seed)
    embeddings = pseudo_text_embeddings(model_cfg.num_tasks,
                                        model_cfg.embed_dim, embed_seed)
    model = TwoStreamModel(model_cfg, embeddings, init_seed=seed)
    x = Tensor(rng.standard_normal(
        (batch_size, model_cfg.in_channels, model_cfg.image_size,
         model_cfg.image_size)))
    labels = rng.choice([1, 0, -1], size=(batch_size, model_cfg.num_tasks),
                        p=[0.35, 0.35, 0.3])
    weights = loss_cfg.weights()
    flags = loss_cfg.flags()
    bank = FrozenConstants()

    def build():
        draws = RandomSource(seed + 7919)
        out = model.forward_train(x, rng=draws,
                                  with_perturbed=flags.needs_perturbed_stream,
                                  freeze=bank.freeze)
        loss, _ = total_loss(out.det_probs, out.det_feats, out.pert_probs,
                             out.pert_feats, labels, weights, epoch,
                             flags=flags, freeze=bank.freeze)
        return loss

    return grad_check(build, model.named_parameters(), eps=eps, tol=tol,
                      max_entries=max_entries, seed=seed,
                      on_eval_start=bank.begin_eval)
