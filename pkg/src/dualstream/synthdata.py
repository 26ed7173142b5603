"""Synthetic multi-domain, partially-labeled image corpus.

Each task is a spatially localized prototype (a gaussian bump at a
task-specific location with task-specific channel weights).  An image is
the sum of the prototypes of its positive tasks plus noise, pushed
through a per-channel affine that differs by domain.  Training domains
draw mild affines; held-out domains draw strictly stronger ones, so
generalization to them exercises robustness to statistics shift.

Partial labels: every training domain only annotates a subset of tasks;
the rest are stored as -1.  Test records keep the full ground truth.

Binary container (all little-endian): magic "DSDS", u32 version, a JSON
config echo, a domain table (affine vectors, labeled-task mask,
prevalences), then fixed-size records of domain id, split, masked
labels, true labels, and the f32 image payload.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

DATA_MAGIC = b"DSDS"
DATA_VERSION = 1

SPLIT_TRAIN = 0
SPLIT_TEST = 1      # test split of the training domains
SPLIT_UNSEEN = 2    # domains never trained on


@dataclass
class DataConfig:
    num_tasks: int = 5
    train_domains: int = 4
    unseen_domains: int = 2
    channels: int = 3
    image_size: int = 12
    train_per_domain: int = 128
    test_per_domain: int = 64
    unseen_per_domain: int = 64
    labeled_fraction: float = 0.6
    prevalence_low: float = 0.3
    prevalence_high: float = 0.6
    noise: float = 0.4
    noise_jitter: float = 0.0   # per-domain noise level spread, as a fraction
    shift_strength: float = 0.5
    unseen_shift_strength: float = 1.0
    scale_floor: float = 0.3
    amplitude: float = 1.6
    seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 1 or self.train_domains < 1:
            raise ConfigError("need at least one task and one training domain")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if not 0.0 < self.prevalence_low <= self.prevalence_high < 1.0:
            raise ConfigError(
                f"prevalences must satisfy 0 < low <= high < 1, got "
                f"{self.prevalence_low}, {self.prevalence_high}"
            )
        if self.unseen_shift_strength < self.shift_strength:
            raise ConfigError("unseen domains must shift at least as hard as training ones")
        if not 0.0 < self.scale_floor <= 1.0:
            raise ConfigError(f"scale_floor must be in (0, 1], got {self.scale_floor}")
        if not 0.0 <= self.noise_jitter < 1.0:
            raise ConfigError(f"noise_jitter must be in [0, 1), got {self.noise_jitter}")


@dataclass
class DomainInfo:
    scale: np.ndarray      # (C,)
    offset: np.ndarray     # (C,)
    labeled: np.ndarray    # (T,) uint8, 1 where the domain annotates the task
    prevalence: np.ndarray  # (T,)
    noise: float
    unseen: bool


@dataclass
class Dataset:
    config: DataConfig
    domains: list
    images: np.ndarray     # (N, C, H, W) float32
    masked: np.ndarray     # (N, T) int8, -1 where unlabeled
    true: np.ndarray       # (N, T) int8
    domain_id: np.ndarray  # (N,) int32
    split: np.ndarray      # (N,) uint8

    def subset(self, split):
        idx = np.flatnonzero(self.split == split)
        return (self.images[idx], self.masked[idx], self.true[idx],
                self.domain_id[idx])


def task_prototypes(cfg, rng):
    """(T, C, H, W) float64 prototype stack."""
    t, c, s = cfg.num_tasks, cfg.channels, cfg.image_size
    protos = np.zeros((t, c, s, s))
    grid = np.arange(s, dtype=np.float64)
    hh, ww = np.meshgrid(grid, grid, indexing="ij")
    center = (s - 1) / 2.0
    radius = s / 3.5
    sig = s / 5.0
    for ti in range(t):
        ang = 2.0 * np.pi * ti / t
        cy = center + radius * np.sin(ang)
        cx = center + radius * np.cos(ang)
        bump = np.exp(-((hh - cy) ** 2 + (ww - cx) ** 2) / (2.0 * sig * sig))
        chan = rng.normal(size=c)
        chan /= max(np.linalg.norm(chan), 1e-12)
        protos[ti] = cfg.amplitude * chan[:, None, None] * bump[None]
    return protos


def _domain_affine(cfg, rng, unseen):
    """Per-channel scale and offset.  Training domains draw magnitudes in
    [0, shift); unseen domains draw in [shift, unseen_shift), strictly
    outside the training range.  Scales are floored so no channel is
    wiped out entirely."""
    c = cfg.channels
    if unseen:
        lo, hi = cfg.shift_strength, cfg.unseen_shift_strength
    else:
        lo, hi = 0.0, cfg.shift_strength
    mag_scale = rng.uniform(lo, hi, size=c)
    mag_off = rng.uniform(lo, hi, size=c)
    scale = 1.0 + rng.choice((-1.0, 1.0), size=c) * mag_scale
    scale = np.maximum(scale, cfg.scale_floor)
    offset = rng.choice((-1.0, 1.0), size=c) * mag_off
    return scale, offset


def _labeled_mask(cfg, rng, domain_index):
    t = cfg.num_tasks
    n_label = max(1, int(np.ceil(cfg.labeled_fraction * t)))
    mask = np.zeros(t, dtype=np.uint8)
    mask[rng.choice(t, size=n_label, replace=False)] = 1
    return mask


def generate_dataset(cfg):
    rng = np.random.default_rng(cfg.seed)
    protos = task_prototypes(cfg, rng)
    t = cfg.num_tasks

    domains = []
    for k in range(cfg.train_domains + cfg.unseen_domains):
        unseen = k >= cfg.train_domains
        scale, offset = _domain_affine(cfg, rng, unseen)
        labeled = (np.ones(t, dtype=np.uint8) if unseen
                   else _labeled_mask(cfg, rng, k))
        prevalence = rng.uniform(cfg.prevalence_low, cfg.prevalence_high, size=t)
        noise = cfg.noise * (1.0 + cfg.noise_jitter * rng.uniform(-1.0, 1.0))
        domains.append(DomainInfo(scale=scale, offset=offset, labeled=labeled,
                                  prevalence=prevalence, noise=noise,
                                  unseen=unseen))

    # every task must be annotated somewhere, or it is untrainable
    train_cov = np.zeros(t, dtype=np.int64)
    for d in domains[:cfg.train_domains]:
        train_cov += d.labeled
    for ti in np.flatnonzero(train_cov == 0):
        domains[int(ti) % cfg.train_domains].labeled[ti] = 1

    images, masked, true, dom_id, split = [], [], [], [], []

    def emit(k, n, split_code):
        d = domains[k]
        y = (rng.uniform(size=(n, t)) < d.prevalence[None, :]).astype(np.int8)
        base = (y[:, :, None, None, None] * protos[None]).sum(axis=1)
        base += d.noise * rng.normal(size=base.shape)
        base = d.scale[None, :, None, None] * base + d.offset[None, :, None, None]
        m = y.copy()
        if split_code == SPLIT_TRAIN:
            m[:, d.labeled == 0] = -1
        images.append(base.astype(np.float32))
        masked.append(m)
        true.append(y)
        dom_id.append(np.full(n, k, dtype=np.int32))
        split.append(np.full(n, split_code, dtype=np.uint8))

    for k in range(cfg.train_domains):
        emit(k, cfg.train_per_domain, SPLIT_TRAIN)
        emit(k, cfg.test_per_domain, SPLIT_TEST)
    for k in range(cfg.train_domains, cfg.train_domains + cfg.unseen_domains):
        emit(k, cfg.unseen_per_domain, SPLIT_UNSEEN)

    return Dataset(
        config=cfg,
        domains=domains,
        images=np.concatenate(images),
        masked=np.concatenate(masked),
        true=np.concatenate(true),
        domain_id=np.concatenate(dom_id),
        split=np.concatenate(split),
    )


# ---------------------------------------------------------------------------
# batching


def iter_batches(images, labels, batch_size, seed, epoch, drop_last=False):
    """Deterministic shuffled minibatches; the permutation depends only on
    (seed, epoch).  Yields (float64 images, labels)."""
    n = images.shape[0]
    order = np.random.default_rng((int(seed), int(epoch))).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if drop_last and idx.shape[0] < batch_size:
            return
        yield images[idx].astype(np.float64), labels[idx]


# ---------------------------------------------------------------------------
# container io


def save_dataset(path, ds):
    cfg_json = json.dumps(asdict(ds.config), sort_keys=True).encode()
    n = ds.images.shape[0]
    t = ds.config.num_tasks
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<I", DATA_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(ds.domains)))
        for d in ds.domains:
            fh.write(struct.pack("<B", 1 if d.unseen else 0))
            fh.write(struct.pack("<d", float(d.noise)))
            fh.write(np.asarray(d.scale, dtype="<f8").tobytes())
            fh.write(np.asarray(d.offset, dtype="<f8").tobytes())
            fh.write(np.asarray(d.labeled, dtype="u1").tobytes())
            fh.write(np.asarray(d.prevalence, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", n))
        for i in range(n):
            fh.write(struct.pack("<iB", int(ds.domain_id[i]), int(ds.split[i])))
            fh.write(ds.masked[i].astype("i1").tobytes())
            fh.write(ds.true[i].astype("i1").tobytes())
            fh.write(np.ascontiguousarray(ds.images[i], dtype="<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated while reading {what}")
        piece = raw[off:off + nbytes]
        off += nbytes
        return piece

    if take(4, "magic") != DATA_MAGIC:
        raise DataFormatError(f"{path}: not a dataset file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != DATA_VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        cfg = DataConfig(**json.loads(take(cfg_len, "config").decode()))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise DataFormatError(f"{path}: bad embedded config: {exc}") from None

    c, s, t = cfg.channels, cfg.image_size, cfg.num_tasks
    (n_dom,) = struct.unpack("<I", take(4, "domain count"))
    domains = []
    for _ in range(n_dom):
        (unseen,) = struct.unpack("<B", take(1, "domain flag"))
        (noise,) = struct.unpack("<d", take(8, "domain noise"))
        scale = np.frombuffer(take(8 * c, "domain scale"), dtype="<f8").copy()
        offset = np.frombuffer(take(8 * c, "domain offset"), dtype="<f8").copy()
        labeled = np.frombuffer(take(t, "domain labels"), dtype="u1").copy()
        prev = np.frombuffer(take(8 * t, "domain prevalence"), dtype="<f8").copy()
        domains.append(DomainInfo(scale=scale, offset=offset, labeled=labeled,
                                  prevalence=prev, noise=noise,
                                  unseen=bool(unseen)))

    (n,) = struct.unpack("<I", take(4, "record count"))
    images = np.empty((n, c, s, s), dtype=np.float32)
    masked = np.empty((n, t), dtype=np.int8)
    true = np.empty((n, t), dtype=np.int8)
    dom_id = np.empty(n, dtype=np.int32)
    split = np.empty(n, dtype=np.uint8)
    payload = 4 * c * s * s
    for i in range(n):
        dom_id[i], split[i] = struct.unpack("<iB", take(5, f"record {i} header"))
        masked[i] = np.frombuffer(take(t, f"record {i} labels"), dtype="i1")
        true[i] = np.frombuffer(take(t, f"record {i} truth"), dtype="i1")
        images[i] = np.frombuffer(
            take(payload, f"record {i} payload"), dtype="<f4"
        ).reshape(c, s, s)
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes")

    bad = ~np.isin(masked, (-1, 0, 1))
    if bad.any():
        raise DataFormatError(f"{path}: record label outside {{-1, 0, 1}}")
    if not np.isfinite(images).all():
        raise DataFormatError(f"{path}: non-finite image payload")
    if dom_id.size and (dom_id.min() < 0 or dom_id.max() >= n_dom):
        raise DataFormatError(f"{path}: record references unknown domain")

    return Dataset(config=cfg, domains=domains, images=images, masked=masked,
                   true=true, domain_id=dom_id, split=split)


def describe(ds):
    """Human-readable summary used by the data manifest."""
    cfg = ds.config
    lines = [
        f"tasks {cfg.num_tasks}, channels {cfg.channels}, "
        f"image {cfg.image_size}x{cfg.image_size}, seed {cfg.seed}",
        f"domains: {cfg.train_domains} training + {cfg.unseen_domains} held out",
    ]
    names = {SPLIT_TRAIN: "train", SPLIT_TEST: "test", SPLIT_UNSEEN: "unseen"}
    for code, name in names.items():
        count = int((ds.split == code).sum())
        lines.append(f"split {name}: {count} records")
    for k, d in enumerate(ds.domains):
        kind = "unseen" if d.unseen else "train"
        tasks = ",".join(str(i) for i in np.flatnonzero(d.labeled))
        lines.append(
            f"domain {k} ({kind}): scale [{d.scale.min():+.2f}, {d.scale.max():+.2f}], "
            f"offset [{d.offset.min():+.2f}, {d.offset.max():+.2f}], "
            f"annotated tasks [{tasks}], "
            f"prevalence {d.prevalence.mean():.2f}, noise {d.noise:.2f}"
        )
    known = (ds.masked[ds.split == SPLIT_TRAIN] != -1)
    if known.size:
        lines.append(f"train label coverage: {known.mean():.3f}")
    return "\n".join(lines)
