"""Training loop.

One deterministic pass and (unless every auxiliary loss is disabled) one
perturbed pass per batch, combined loss, Adam step.  The learning rate
decays by train.lr_decay every train.lr_decay_every epochs; the
consistency weight is zero through the warmup epochs.

Two output files besides checkpoints:

  train_log.csv   config echo as '# key = value' comments, then one row
                  per optimizer step.  Fully determined by the config,
                  the dataset and the kernel backend; reruns must match
                  byte for byte.
  timing.txt      wall-clock sidecar.  Timing lives here, outside the
                  log, precisely so the log can stay reproducible.
"""

import os
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import config_lines
from .decoupling import load_embeddings, pseudo_text_embeddings
from .dsu import RandomSource
from .errors import ConfigError, NonFiniteError
from .losses import total_loss
from .model import TwoStreamModel
from .optim import Adam
from .synthdata import SPLIT_TRAIN, iter_batches
from .tensor import Tensor

LOG_COLUMNS = ("epoch", "step", "lr", "ce", "fdist", "sdist", "con", "total")


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    epochs_run: int
    final_parts: dict
    dsu_draws: int


def lr_at_epoch(train_cfg, epoch):
    if epoch < 1:
        raise ConfigError(f"epoch is 1-based, got {epoch}")
    steps = (epoch - 1) // train_cfg.lr_decay_every
    return train_cfg.lr * (train_cfg.lr_decay ** steps)


def resolve_embeddings(run):
    """Load curated task embeddings, or generate unit-norm stand-ins."""
    if run.embed.path:
        emb = load_embeddings(run.embed.path)
        want = (run.model.num_tasks, run.model.embed_dim)
        if emb.shape != want:
            raise ConfigError(
                f"embeddings {run.embed.path} have shape {emb.shape}, "
                f"model wants {want}"
            )
        return emb
    return pseudo_text_embeddings(run.model.num_tasks, run.model.embed_dim,
                                  run.embed.seed)


def check_dataset_compat(run, dataset):
    pairs = (
        ("num_tasks", run.model.num_tasks, dataset.config.num_tasks),
        ("channels", run.model.in_channels, dataset.config.channels),
        ("image_size", run.model.image_size, dataset.config.image_size),
    )
    for name, want, have in pairs:
        if want != have:
            raise ConfigError(
                f"model expects {name}={want} but the dataset has {have}"
            )


def train(run, dataset, out_dir):
    check_dataset_compat(run, dataset)
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.perf_counter()

    embeddings = resolve_embeddings(run)
    model = TwoStreamModel(run.model, embeddings, init_seed=run.train.seed)
    opt = Adam(model.parameters(), lr=run.train.lr,
               betas=(run.train.beta1, run.train.beta2),
               weight_decay=run.train.weight_decay)
    weights = run.loss.weights()
    flags = run.loss.flags()
    needs_pert = flags.needs_perturbed_stream
    dsu_rng = RandomSource(run.train.seed + 1000003)

    images, masked, _, _ = dataset.subset(SPLIT_TRAIN)
    if images.shape[0] == 0:
        raise ConfigError("dataset has no training records")

    rows = []
    parts = {}
    for epoch in range(1, run.train.epochs + 1):
        opt.lr = lr_at_epoch(run.train, epoch)
        for step, (x, y) in enumerate(
                iter_batches(images, masked, run.train.batch_size,
                             seed=run.train.seed, epoch=epoch,
                             drop_last=run.train.drop_last), 1):
            out = model.forward_train(Tensor(x),
                                      rng=dsu_rng if needs_pert else None,
                                      with_perturbed=needs_pert)
            loss, parts = total_loss(out.det_probs, out.det_feats,
                                     out.pert_probs, out.pert_feats,
                                     y, weights, epoch, flags)
            for name, val in parts.items():
                if not np.isfinite(val):
                    raise NonFiniteError(
                        f"loss component '{name}' became non-finite at "
                        f"epoch {epoch} step {step}"
                    )
            opt.zero_grad()
            loss.backward()
            opt.step()
            rows.append((epoch, step, opt.lr, parts["ce"], parts["fdist"],
                         parts["sdist"], parts["con"], parts["total"]))
        if run.train.checkpoint_every and epoch % run.train.checkpoint_every == 0:
            model.save_checkpoint(os.path.join(out_dir, f"model_epoch{epoch}.ckpt"))

    ckpt_path = os.path.join(out_dir, "model.ckpt")
    model.save_checkpoint(ckpt_path)

    log_path = os.path.join(out_dir, "train_log.csv")
    with open(log_path, "w") as fh:
        for line in config_lines(run):
            fh.write(f"# {line}\n")
        fh.write(f"# kernel_backend = {kernels.BACKEND_NAME}\n")
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for epoch, step, lr, *vals in rows:
            cells = [str(epoch), str(step), repr(lr)] + [repr(v) for v in vals]
            fh.write(",".join(cells) + "\n")

    # wall time is deliberately kept out of the deterministic log
    with open(os.path.join(out_dir, "timing.txt"), "w") as fh:
        fh.write(f"wall_seconds = {time.perf_counter() - t_start:.3f}\n")
        fh.write(f"steps = {len(rows)}\n")

    return TrainResult(checkpoint_path=ckpt_path, log_path=log_path,
                       epochs_run=run.train.epochs, final_parts=parts,
                       dsu_draws=dsu_rng.draws)
