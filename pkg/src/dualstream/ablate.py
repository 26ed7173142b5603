"""Ablation and sweep driver.

Three modes, each a list of named config variants:

  losses   the contribution study: the full objective, each auxiliary
           term removed in turn, and supervision only.
  tau      pseudo-label confidence threshold sweep.
  lambda   grid over the three auxiliary weights.

Every (variant, seed) cell trains from scratch and is evaluated on the
held-in test split and on the held-out domains.  Cells run in a process
pool; a cell that dies is recorded with its error and the rest continue.
Results are aggregated per variant as mean and sample std over seeds.
"""

import csv
import multiprocessing as mp
import os
from dataclasses import dataclass

import numpy as np

from .config import clone_config
from .errors import ConfigError
from .evaluate import evaluate_split
from .model import TwoStreamModel
from .train import train


@dataclass
class CellResult:
    variant: str
    seed: int
    test_f1: float = float("nan")
    test_kappa: float = float("nan")
    unseen_f1: float = float("nan")
    unseen_kappa: float = float("nan")
    error: str = ""


def losses_variants():
    return [
        ("full", {}),
        ("no_fdist", {"loss": {"enable_fdist": False}}),
        ("no_sdist", {"loss": {"enable_sdist": False}}),
        ("no_con", {"loss": {"enable_con": False}}),
        ("supervised_only", {"loss": {"enable_fdist": False,
                                      "enable_sdist": False,
                                      "enable_con": False}}),
    ]


def tau_variants(taus=(0.99, 0.95, 0.90, 0.85)):
    return [(f"tau_{tau:g}", {"loss": {"tau": float(tau)}}) for tau in taus]


def lambda_variants(l_fdist=(0.1, 0.05, 0.025), l_sdist=(0.5, 1.0, 2.0),
                    l_con=(0.4, 0.6, 0.8)):
    out = []
    for a in l_fdist:
        for b in l_sdist:
            for c in l_con:
                name = f"l1_{a:g}_l2_{b:g}_l3_{c:g}"
                out.append((name, {"loss": {"lambda_fdist": float(a),
                                            "lambda_sdist": float(b),
                                            "lambda_con": float(c)}}))
    return out


MODES = {
    "losses": losses_variants,
    "tau": tau_variants,
    "lambda": lambda_variants,
}


def run_cell(run, dataset, variant_name, updates, seed, workdir):
    """Train one configuration with one seed and score both eval splits."""
    merged = dict(updates)
    train_updates = dict(merged.get("train", {}))
    train_updates["seed"] = int(seed)
    merged["train"] = train_updates
    cfg = clone_config(run, **merged)
    out_dir = os.path.join(workdir, f"{variant_name}_seed{seed}")
    result = train(cfg, dataset, out_dir)
    model = TwoStreamModel.load_checkpoint(result.checkpoint_path)
    test = evaluate_split(model, dataset, "test")
    unseen = evaluate_split(model, dataset, "unseen")
    return CellResult(variant=variant_name, seed=seed,
                      test_f1=test.mean_f1, test_kappa=test.mean_kappa,
                      unseen_f1=unseen.mean_f1, unseen_kappa=unseen.mean_kappa)


def _cell_worker(args):
    run, dataset, name, updates, seed, workdir = args
    try:
        return run_cell(run, dataset, name, updates, seed, workdir)
    except Exception as exc:  # cell failures must not sink the sweep
        return CellResult(variant=name, seed=seed,
                          error=f"{type(exc).__name__}: {exc}")


@dataclass
class VariantSummary:
    variant: str
    seeds_ok: int
    seeds_failed: int
    test_f1_mean: float
    test_f1_std: float
    unseen_f1_mean: float
    unseen_f1_std: float
    unseen_kappa_mean: float
    unseen_kappa_std: float
    errors: tuple = ()


def _mean_std(values):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def summarize(cells):
    order = []
    grouped = {}
    for c in cells:
        if c.variant not in grouped:
            grouped[c.variant] = []
            order.append(c.variant)
        grouped[c.variant].append(c)
    out = []
    for name in order:
        group = grouped[name]
        ok = [c for c in group if not c.error]
        tf_m, tf_s = _mean_std([c.test_f1 for c in ok])
        uf_m, uf_s = _mean_std([c.unseen_f1 for c in ok])
        uk_m, uk_s = _mean_std([c.unseen_kappa for c in ok])
        out.append(VariantSummary(
            variant=name, seeds_ok=len(ok), seeds_failed=len(group) - len(ok),
            test_f1_mean=tf_m, test_f1_std=tf_s,
            unseen_f1_mean=uf_m, unseen_f1_std=uf_s,
            unseen_kappa_mean=uk_m, unseen_kappa_std=uk_s,
            errors=tuple(c.error for c in group if c.error),
        ))
    return out


def run_ablation(run, dataset, mode, seeds, out_dir, jobs=1, variants=None):
    """Returns (cells, summaries); also writes CSV and a text table."""
    if variants is None:
        if mode not in MODES:
            raise ConfigError(f"unknown ablation mode {mode!r}; have {sorted(MODES)}")
        variants = MODES[mode]()
    os.makedirs(out_dir, exist_ok=True)
    workdir = os.path.join(out_dir, "cells")
    tasks = [(run, dataset, name, updates, seed, workdir)
             for name, updates in variants for seed in seeds]

    if jobs > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=jobs) as pool:
            cells = pool.map(_cell_worker, tasks)
    else:
        cells = [_cell_worker(t) for t in tasks]

    summaries = summarize(cells)
    _write_outputs(out_dir, mode, cells, summaries)
    return cells, summaries


def _write_outputs(out_dir, mode, cells, summaries):
    with open(os.path.join(out_dir, f"ablation_{mode}_cells.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "test_f1", "test_kappa",
                    "unseen_f1", "unseen_kappa", "error"])
        for c in cells:
            w.writerow([c.variant, c.seed, repr(c.test_f1), repr(c.test_kappa),
                        repr(c.unseen_f1), repr(c.unseen_kappa), c.error])
    with open(os.path.join(out_dir, f"ablation_{mode}_summary.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seeds_ok", "seeds_failed",
                    "test_f1_mean", "test_f1_std",
                    "unseen_f1_mean", "unseen_f1_std",
                    "unseen_kappa_mean", "unseen_kappa_std"])
        for s in summaries:
            w.writerow([s.variant, s.seeds_ok, s.seeds_failed,
                        repr(s.test_f1_mean), repr(s.test_f1_std),
                        repr(s.unseen_f1_mean), repr(s.unseen_f1_std),
                        repr(s.unseen_kappa_mean), repr(s.unseen_kappa_std)])


def format_summaries(summaries):
    lines = [f"{'variant':<24} {'ok':>3} {'fail':>4} "
             f"{'test f1':>16} {'unseen f1':>16} {'unseen kappa':>16}"]
    for s in summaries:
        lines.append(
            f"{s.variant:<24} {s.seeds_ok:>3} {s.seeds_failed:>4} "
            f"{s.test_f1_mean:8.4f}±{s.test_f1_std:<7.4f} "
            f"{s.unseen_f1_mean:8.4f}±{s.unseen_f1_std:<7.4f} "
            f"{s.unseen_kappa_mean:8.4f}±{s.unseen_kappa_std:<7.4f}"
        )
        for err in s.errors:
            lines.append(f"    failed: {err}")
    return "\n".join(lines)
