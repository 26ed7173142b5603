"""Training losses.

Four terms, combined by total_loss:

  ce     partially-supervised binary cross-entropy on the deterministic
         stream; each sample is normalized by its own known-label count
         and samples with nothing known drop out of the average.
  fdist  multi-kernel MMD between the two streams' task features, one
         estimate per task, averaged.  Gaussian kernels at
         {0.5, 1, 2} x the median pairwise squared distance.
  sdist  self-distillation on predictions over known labels.  The
         default is the single-term form  -(1/k_b) sum delta * p_det *
         log(p_pert / p_det);  full_bernoulli_kl adds the complement
         term, making it a proper Bernoulli KL.
  con    consistency on unknown labels through confident pseudo-labels:
         entries where the deterministic stream is above tau (positive)
         or below 1-tau (negative) supervise the perturbed stream.

The deterministic stream is the teacher for fdist/sdist/con: its values
enter those losses as constants (no gradient back through the teacher),
except with bidirectional_distill where fdist trains both streams.
Probabilities are clamped to [1e-7, 1 - 1e-7] before any log.

Labels arrive as an int array in {1, 0, -1}; -1 marks unknown.  All data
dependent weights (masks, per-sample normalizers, bandwidths) are built
as constants, and every such constant passes through the optional
``freeze`` hook so audits can replay them.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NoSupervisionError, ShapeError
from .tensor import Tensor, constant

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_fdist: float = 0.05
    lambda_sdist: float = 1.0
    lambda_con: float = 0.6
    con_warmup_epochs: int = 5
    tau: float = 0.95


def consistency_weight(epoch, weights):
    """The consistency term is held at zero for the first warmup epochs
    (epoch is 1-based), then jumps to lambda_con."""
    if epoch < 1:
        raise ShapeError(f"epoch is 1-based, got {epoch}")
    return 0.0 if epoch <= weights.con_warmup_epochs else weights.lambda_con


def _check_labels(labels, shape):
    labels = np.asarray(labels)
    if labels.shape != shape:
        raise ShapeError(f"labels shape {labels.shape} does not match predictions {shape}")
    bad = ~np.isin(labels, (-1, 0, 1))
    if bad.any():
        raise ShapeError(f"labels must be in {{1, 0, -1}}, found {labels[bad].ravel()[0]!r}")
    return labels.astype(np.int64)


def _freeze(freeze, arr):
    return arr if freeze is None else freeze(arr)


def partial_bce(probs, labels, freeze=None):
    """probs: Tensor (B, T) of positive-class probabilities."""
    labels = _check_labels(labels, probs.shape)
    known = (labels != -1)
    per_sample = known.sum(axis=1)
    contributing = per_sample > 0
    n_contrib = int(contributing.sum())
    if n_contrib == 0:
        raise NoSupervisionError("every label in the batch is unknown")

    k = np.where(per_sample > 0, per_sample, 1).astype(np.float64)
    row_w = np.where(contributing, 1.0 / (k * n_contrib), 0.0)[:, None]
    w_pos = _freeze(freeze, np.where(labels == 1, row_w, 0.0))
    w_neg = _freeze(freeze, np.where(labels == 0, row_w, 0.0))

    p = T.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = -((constant(w_pos) * T.log(p)).sum()
             + (constant(w_neg) * T.log(1.0 - p)).sum())
    return loss


def distill_kl(student_probs, teacher, labels, full_bernoulli=False, freeze=None):
    """Known-label self-distillation; teacher is an ndarray (constant)."""
    labels = _check_labels(labels, student_probs.shape)
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.shape != tuple(student_probs.shape):
        raise ShapeError(
            f"teacher shape {teacher.shape} does not match student {student_probs.shape}"
        )
    known = (labels != -1)
    per_sample = known.sum(axis=1)
    contributing = per_sample > 0
    n_contrib = int(contributing.sum())
    if n_contrib == 0:
        raise NoSupervisionError("every label in the batch is unknown")

    k = np.where(per_sample > 0, per_sample, 1).astype(np.float64)
    row_w = np.where(contributing, 1.0 / (k * n_contrib), 0.0)[:, None]
    w = np.where(known, row_w, 0.0)

    th = np.clip(teacher, PROB_EPS, 1.0 - PROB_EPS)
    w_pos = _freeze(freeze, w * th)
    const_pos = _freeze(freeze, np.sum(w * th * np.log(th)))
    p = T.clamp(student_probs, PROB_EPS, 1.0 - PROB_EPS)
    # sum w * th * (log th - log p)
    loss = constant(const_pos) - (constant(w_pos) * T.log(p)).sum()
    if full_bernoulli:
        w_neg = _freeze(freeze, w * (1.0 - th))
        const_neg = _freeze(freeze, np.sum(w * (1.0 - th) * np.log(1.0 - th)))
        loss = loss + constant(const_neg) - (constant(w_neg) * T.log(1.0 - p)).sum()
    return loss


def pseudo_consistency(student_probs, teacher, labels, tau, freeze=None):
    """Pseudo-label consistency on unknown entries.

    Strict thresholds: teacher > tau makes a pseudo-positive, teacher <
    1 - tau a pseudo-negative, anything else is ignored.  Averaged over
    the selected entries; with none selected the loss is exactly zero.
    """
    labels = _check_labels(labels, student_probs.shape)
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.shape != tuple(student_probs.shape):
        raise ShapeError(
            f"teacher shape {teacher.shape} does not match student {student_probs.shape}"
        )
    if not 0.5 <= tau < 1.0:
        raise ShapeError(f"tau must be in [0.5, 1), got {tau}")
    unknown = (labels == -1)
    pos = unknown & (teacher > tau)
    neg = unknown & (teacher < 1.0 - tau)
    m = int(pos.sum() + neg.sum())
    m_arr = _freeze(freeze, np.array(float(m)))
    if m_arr == 0.0:
        return constant(0.0)
    w_pos = _freeze(freeze, pos.astype(np.float64) / m_arr)
    w_neg = _freeze(freeze, neg.astype(np.float64) / m_arr)
    p = T.clamp(student_probs, PROB_EPS, 1.0 - PROB_EPS)
    return -((constant(w_pos) * T.log(p)).sum()
             + (constant(w_neg) * T.log(1.0 - p)).sum())


# ---------------------------------------------------------------------------
# MMD feature distillation


def _pairwise_sq_dists(x, y):
    """x: (T, B, C), y: (T, B, C) tensors -> (T, B, B) squared distances."""
    t, b, c = x.shape
    x2 = (x * x).sum(axis=2)
    y2 = (y * y).sum(axis=2)
    xy = (x.reshape(t, b, 1, c) * y.reshape(t, 1, b, c)).sum(axis=3)
    return x2.reshape(t, b, 1) + y2.reshape(t, 1, b) - 2.0 * xy


def median_bandwidths(student_data, teacher_data, freeze=None):
    """Per-task bandwidth triple {m/2, m, 2m} from the median pairwise
    squared distance over the pooled 2B points; a zero median is floored
    to one.  Returns an ndarray (T, 3), a constant for the graph."""
    z = np.concatenate([student_data, teacher_data], axis=0)  # (2B, T, C)
    t = z.shape[1]
    out = np.empty((t, 3), dtype=np.float64)
    for ti in range(t):
        pts = z[:, ti, :]
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        iu = np.triu_indices(d2.shape[0], k=1)
        med = float(np.median(d2[iu])) if iu[0].size else 0.0
        if med <= 0.0:
            med = 1.0
        out[ti] = (0.5 * med, med, 2.0 * med)
    return _freeze(freeze, out)


def mmd_distill(student_feats, teacher_feats, bandwidths=None, pointwise=False,
                freeze=None):
    """Feature distillation between streams.

    student_feats: Tensor (B, T, C), gets gradients.
    teacher_feats: Tensor (B, T, C); pass a constant for one-way
        distillation, a live node for bidirectional.
    bandwidths: optional (T, H) or (H,) array overriding the median
        heuristic (useful for audits).
    pointwise: replace the set-level estimate with a per-instance one,
        mean over (b, t) of k(x,x) + k(y,y) - 2 k(x,y).
    """
    if student_feats.ndim != 3 or teacher_feats.ndim != 3:
        raise ShapeError(
            f"mmd_distill expects (B, T, C) features, got {student_feats.shape} "
            f"and {teacher_feats.shape}"
        )
    if tuple(student_feats.shape) != tuple(teacher_feats.shape):
        raise ShapeError(
            f"stream feature shapes differ: {student_feats.shape} vs "
            f"{teacher_feats.shape}"
        )
    b, t, c = student_feats.shape
    if bandwidths is None:
        bw = median_bandwidths(student_feats.data, teacher_feats.data, freeze=freeze)
    else:
        bw = np.asarray(bandwidths, dtype=np.float64)
        if bw.ndim == 1:
            bw = np.broadcast_to(bw, (t, bw.shape[0])).copy()
        if bw.shape[0] != t:
            raise ShapeError(f"bandwidths for {bw.shape[0]} tasks, model has {t}")
    if np.any(bw <= 0.0):
        raise ShapeError("bandwidths must be positive")
    h = bw.shape[1]

    x = student_feats.transpose(1, 0, 2)  # (T, B, C)
    y = teacher_feats.transpose(1, 0, 2)

    if pointwise:
        d = x - y
        d2 = (d * d).sum(axis=2)          # (T, B)
        acc = None
        for hi in range(h):
            k = T.exp(-(d2 / constant(bw[:, hi].reshape(t, 1))))
            acc = k if acc is None else acc + k
        # k(x,x) + k(y,y) - 2 k(x,y) with unit self-kernels
        per_pair = 2.0 * float(h) - 2.0 * acc
        return per_pair.mean()

    def kernel_mean(d2):
        acc = None
        for hi in range(h):
            k = T.exp(-(d2 / constant(bw[:, hi].reshape(t, 1, 1))))
            acc = k if acc is None else acc + k
        return acc.mean(axis=(1, 2))      # (T,)

    k_xx = kernel_mean(_pairwise_sq_dists(x, x))
    k_yy = kernel_mean(_pairwise_sq_dists(y, y))
    k_xy = kernel_mean(_pairwise_sq_dists(x, y))
    per_task = k_xx + k_yy - 2.0 * k_xy
    return per_task.mean()


# ---------------------------------------------------------------------------
# combination


@dataclass
class LossFlags:
    enable_fdist: bool = True
    enable_sdist: bool = True
    enable_con: bool = True
    full_bernoulli_kl: bool = False
    pointwise_mmd: bool = False
    bidirectional_distill: bool = False

    @property
    def needs_perturbed_stream(self):
        return self.enable_fdist or self.enable_sdist or self.enable_con


def total_loss(det_probs, det_feats, pert_probs, pert_feats, labels, weights,
               epoch, flags, mmd_bandwidths=None, freeze=None):
    """Combine the four terms for one batch.

    Returns (loss Tensor, parts dict of floats).  pert_* may be None
    when no auxiliary loss is enabled.
    """
    parts = {}
    loss = partial_bce(det_probs, labels, freeze=freeze)
    parts["ce"] = loss.item()

    if flags.needs_perturbed_stream and (pert_probs is None or pert_feats is None):
        raise ShapeError("auxiliary losses enabled but no perturbed stream outputs")

    if flags.enable_fdist:
        if flags.bidirectional_distill:
            teacher_feats = det_feats
        else:
            teacher_feats = constant(_freeze(freeze, det_feats.data))
        fdist = mmd_distill(pert_feats, teacher_feats,
                            bandwidths=mmd_bandwidths,
                            pointwise=flags.pointwise_mmd, freeze=freeze)
        parts["fdist"] = fdist.item()
        loss = loss + weights.lambda_fdist * fdist
    else:
        parts["fdist"] = 0.0

    if flags.enable_sdist or flags.enable_con:
        teacher_probs = _freeze(freeze, det_probs.data)

    if flags.enable_sdist:
        sdist = distill_kl(pert_probs, teacher_probs, labels,
                           full_bernoulli=flags.full_bernoulli_kl, freeze=freeze)
        parts["sdist"] = sdist.item()
        loss = loss + weights.lambda_sdist * sdist
    else:
        parts["sdist"] = 0.0

    if flags.enable_con:
        w_con = consistency_weight(epoch, weights)
        con = pseudo_consistency(pert_probs, teacher_probs, labels,
                                 weights.tau, freeze=freeze)
        parts["con"] = con.item()
        # the term is computed (and logged) during warmup but weighted zero
        if w_con != 0.0:
            loss = loss + w_con * con
    else:
        parts["con"] = 0.0

    parts["total"] = loss.item()
    return loss, parts
