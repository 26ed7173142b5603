"""Evaluation metrics and their aggregation.

Two per-task metrics: F1 of the positive class and quadratic-weighted
kappa (binary, so the weight matrix is 0 on the diagonal and 1 off it).
Both return nan when undefined (no positive in prediction or truth for
F1; chance agreement saturated for kappa), and the aggregation skips nan
cells rather than counting them as zero.

Aggregation runs task-by-task: average a task's metric over the
evaluation domains where it is defined, then average those per-task
scores.  A model is summarized by that task-mean F1 and kappa.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


def binarize(probs, threshold=0.5):
    """Probabilities to hard 0/1 calls; a tie at the threshold is positive."""
    return (np.asarray(probs) >= threshold).astype(np.int64)


def _check_binary(pred, true):
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise ShapeError(f"prediction shape {pred.shape} vs truth {true.shape}")
    for name, arr in (("prediction", pred), ("truth", true)):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ShapeError(f"{name} must be 0/1 for metric computation")
    return pred.astype(np.int64), true.astype(np.int64)


def f_score(pred, true):
    """F1 of the positive class; nan when there are no positives anywhere."""
    pred, true = _check_binary(pred, true)
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return float("nan")
    return 2.0 * tp / denom


def quadratic_kappa(pred, true):
    """Quadratic-weighted kappa.  With two grades the quadratic weights
    reduce to 0/1, i.e. 1 - disagreement/chance-disagreement.  nan when
    chance disagreement is zero (a degenerate marginal)."""
    pred, true = _check_binary(pred, true)
    n = pred.size
    if n == 0:
        return float("nan")
    obs = np.zeros((2, 2), dtype=np.float64)
    for p, t in zip(pred, true):
        obs[t, p] += 1.0
    row = obs.sum(axis=1)
    col = obs.sum(axis=0)
    expect = np.outer(row, col) / n
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    denom = float((w * expect).sum())
    if denom == 0.0:
        return float("nan")
    return 1.0 - float((w * obs).sum()) / denom


# ---------------------------------------------------------------------------
# model evaluation over domains


@dataclass
class Cell:
    domain: int
    task: int
    count: int
    f1: float
    kappa: float


@dataclass
class EvalReport:
    cells: list = field(default_factory=list)
    num_tasks: int = 0

    def per_task(self, metric):
        """Task -> mean over domains where the metric is defined (or nan)."""
        out = np.full(self.num_tasks, np.nan)
        for t in range(self.num_tasks):
            vals = [getattr(c, metric) for c in self.cells
                    if c.task == t and not np.isnan(getattr(c, metric))]
            if vals:
                out[t] = float(np.mean(vals))
        return out

    def mean(self, metric):
        per = self.per_task(metric)
        defined = per[~np.isnan(per)]
        return float(defined.mean()) if defined.size else float("nan")

    @property
    def mean_f1(self):
        return self.mean("f1")

    @property
    def mean_kappa(self):
        return self.mean("kappa")


def predict_in_batches(model, images, batch_size=64):
    """Deterministic-stream probabilities for a stack of images."""
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        x = Tensor(images[start:start + batch_size].astype(np.float64))
        chunks.append(model.predict(x))
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.num_tasks))


def evaluate_predictions(probs, true, domain_id, threshold=0.5):
    """Score per (domain, task) cell.  true: (N, T) in {0, 1}."""
    probs = np.asarray(probs)
    true = np.asarray(true)
    if probs.shape != true.shape:
        raise ShapeError(f"probs shape {probs.shape} vs truth {true.shape}")
    pred = binarize(probs, threshold)
    report = EvalReport(num_tasks=probs.shape[1])
    for d in sorted(set(int(x) for x in domain_id)):
        rows = domain_id == d
        for t in range(probs.shape[1]):
            report.cells.append(Cell(
                domain=d, task=t, count=int(rows.sum()),
                f1=f_score(pred[rows, t], true[rows, t]),
                kappa=quadratic_kappa(pred[rows, t], true[rows, t]),
            ))
    return report


def evaluate_model(model, images, true, domain_id, batch_size=64, threshold=0.5):
    probs = predict_in_batches(model, images, batch_size)
    return evaluate_predictions(probs, true, domain_id, threshold)


def format_report(report, title=""):
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'domain':>6} {'task':>4} {'n':>5} {'f1':>8} {'kappa':>8}")

    def fmt(v):
        return "   undef" if np.isnan(v) else f"{v:8.4f}"

    for c in report.cells:
        lines.append(f"{c.domain:>6} {c.task:>4} {c.count:>5} {fmt(c.f1)} {fmt(c.kappa)}")
    per_f = report.per_task("f1")
    per_k = report.per_task("kappa")
    for t in range(report.num_tasks):
        lines.append(f"task {t}: f1 {fmt(per_f[t])}  kappa {fmt(per_k[t])}")
    lines.append(f"mean over tasks: f1 {fmt(np.float64(report.mean_f1))}  "
                 f"kappa {fmt(np.float64(report.mean_kappa))}")
    return "\n".join(lines)


def write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "task", "count", "f1", "kappa"])
        for c in report.cells:
            w.writerow([c.domain, c.task, c.count, repr(c.f1), repr(c.kappa)])
        w.writerow(["mean", "", "", repr(report.mean_f1), repr(report.mean_kappa)])
