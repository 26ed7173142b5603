"""Checkpoint evaluation over dataset splits."""

from .errors import ConfigError
from .metrics import evaluate_model, format_report
from .model import TwoStreamModel
from .synthdata import SPLIT_TEST, SPLIT_TRAIN, SPLIT_UNSEEN

SPLIT_NAMES = {"train": SPLIT_TRAIN, "test": SPLIT_TEST, "unseen": SPLIT_UNSEEN}


def check_model_compat(model, dataset):
    pairs = (
        ("num_tasks", model.config.num_tasks, dataset.config.num_tasks),
        ("channels", model.config.in_channels, dataset.config.channels),
        ("image_size", model.config.image_size, dataset.config.image_size),
    )
    for name, want, have in pairs:
        if want != have:
            raise ConfigError(
                f"checkpoint expects {name}={want} but the dataset has {have}"
            )


def evaluate_split(model, dataset, split_name, batch_size=64, threshold=0.5):
    if split_name not in SPLIT_NAMES:
        raise ConfigError(
            f"unknown split {split_name!r}; pick one of {sorted(SPLIT_NAMES)}"
        )
    check_model_compat(model, dataset)
    images, _, true, domain_id = dataset.subset(SPLIT_NAMES[split_name])
    if images.shape[0] == 0:
        raise ConfigError(f"split {split_name!r} has no records")
    return evaluate_model(model, images, true, domain_id,
                          batch_size=batch_size, threshold=threshold)


def evaluate_checkpoint(ckpt_path, dataset, split_name, batch_size=64,
                        threshold=0.5):
    model = TwoStreamModel.load_checkpoint(ckpt_path)
    report = evaluate_split(model, dataset, split_name,
                            batch_size=batch_size, threshold=threshold)
    text = format_report(report, title=f"split: {split_name}")
    return report, text
