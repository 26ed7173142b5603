"""The two-stream screening model.

One shared encoder (avg-pool + per-pixel channel mix + tanh per stage),
run twice per training batch:

  deterministic stream:  encode -> decouple -> heads.  Carries the
      supervised loss and is the only stream used at inference.
  perturbed stream:      encode with statistics uncertainty injected
      after every stage -> decouple -> heads.  Trained to agree with the
      deterministic stream through the distillation/consistency losses.

Encoder weights and classifier heads are shared between streams.  The
attention that pools task-specific features is shared too by default;
``tied_decoupling=False`` gives the perturbed stream its own copy (then
the deterministic copy must receive exactly zero gradient from the
auxiliary losses, which a test pins down).

Checkpoints are a small self-describing binary: magic, version, the
config as JSON, then named float64 blocks.  Loading rejects any file
whose config does not match the model it is loaded into.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .decoupling import DecouplingParams, decouple, init_decoupling_params
from .dsu import dsu_forward
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import Tensor, constant

CKPT_MAGIC = b"DSCK"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    in_channels: int = 3
    image_size: int = 12
    stage_channels: tuple = (20, 40)
    pool_factors: tuple = (2, 2)
    num_tasks: int = 5
    embed_dim: int = 16
    attn_dim: int = 16
    dsu_scope: str = "std"
    tied_decoupling: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.pool_factors = tuple(int(k) for k in self.pool_factors)
        if len(self.stage_channels) != len(self.pool_factors):
            raise ConfigError(
                f"{len(self.stage_channels)} stage widths but "
                f"{len(self.pool_factors)} pool factors"
            )
        if not self.stage_channels:
            raise ConfigError("need at least one encoder stage")
        size = self.image_size
        for k in self.pool_factors:
            if k < 1 or size % k != 0:
                raise ConfigError(
                    f"pool factors {self.pool_factors} do not divide image size "
                    f"{self.image_size}"
                )
            size //= k
        if size < 1:
            raise ConfigError("encoder pools the image away entirely")
        if self.dsu_scope not in ("std", "var"):
            raise ConfigError(f"dsu_scope must be 'std' or 'var', got {self.dsu_scope!r}")
        for name in ("in_channels", "num_tasks", "embed_dim", "attn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def final_size(self):
        size = self.image_size
        for k in self.pool_factors:
            size //= k
        return size

    @property
    def final_channels(self):
        return self.stage_channels[-1]


@dataclass
class StreamOutputs:
    det_probs: Tensor
    det_feats: Tensor
    det_alpha: Tensor
    pert_probs: Tensor = None
    pert_feats: Tensor = None
    pert_alpha: Tensor = None


def _avg_pool(x, k):
    if k == 1:
        return x
    b, c, h, w = x.shape
    return x.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))


def _channel_mix(x, weight, bias):
    b, c, h, w = x.shape
    c_out = weight.shape[1]
    flat = x.transpose(0, 2, 3, 1).reshape(b * h * w, c)
    mixed = (flat @ weight).reshape(b, h, w, c_out).transpose(0, 3, 1, 2)
    return mixed + bias.reshape(1, c_out, 1, 1)


class TwoStreamModel:
    def __init__(self, config, embeddings, init_seed=0):
        self.config = config
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape != (config.num_tasks, config.embed_dim):
            raise ShapeError(
                f"embeddings shape {embeddings.shape} does not match config "
                f"({config.num_tasks}, {config.embed_dim})"
            )
        self.embeddings = embeddings
        self._embed_const = constant(embeddings)
        rng = np.random.default_rng(init_seed)

        def he(fan_in, shape):
            bound = np.sqrt(6.0 / fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        self.stage_weights = []
        self.stage_biases = []
        c_in = config.in_channels
        for c_out in config.stage_channels:
            self.stage_weights.append(he(c_in, (c_in, c_out)))
            self.stage_biases.append(Tensor(np.zeros(c_out), requires_grad=True))
            c_in = c_out

        self.decoupling = init_decoupling_params(
            config.final_channels, config.embed_dim, config.attn_dim, rng)
        if config.tied_decoupling:
            self.decoupling_pert = self.decoupling
        else:
            self.decoupling_pert = init_decoupling_params(
                config.final_channels, config.embed_dim, config.attn_dim, rng)

        self.head_weight = he(config.final_channels,
                              (config.num_tasks, config.final_channels))
        self.head_bias = Tensor(np.zeros(config.num_tasks), requires_grad=True)

    # -- parameters -----------------------------------------------------------

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.stage_weights, self.stage_biases)):
            out[f"stage{i}.weight"] = w
            out[f"stage{i}.bias"] = b
        out.update(self.decoupling.named("decouple"))
        if not self.config.tied_decoupling:
            out.update(self.decoupling_pert.named("decouple_pert"))
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    # -- forward --------------------------------------------------------------

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels \
                or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise ShapeError(
                f"expected input (batch, {cfg.in_channels}, {cfg.image_size}, "
                f"{cfg.image_size}), got {tuple(x.shape)}"
            )

    def _encode(self, x, rng=None, freeze=None):
        # the perturbed stream injects uncertainty at every depth, the raw
        # input included: channel-stat shifts there are exactly what a new
        # acquisition domain does to an image
        h = x
        if rng is not None:
            h = dsu_forward(h, rng, scope=self.config.dsu_scope, freeze=freeze)
        for w, b, k in zip(self.stage_weights, self.stage_biases,
                           self.config.pool_factors):
            h = _avg_pool(h, k)
            h = T.tanh(_channel_mix(h, w, b))
            if rng is not None:
                h = dsu_forward(h, rng, scope=self.config.dsu_scope, freeze=freeze)
        return h

    def _spatial_tokens(self, h):
        b, c, hh, ww = h.shape
        return h.transpose(0, 2, 3, 1).reshape(b, hh * ww, c)

    def _heads(self, feats):
        t, c = self.head_weight.shape
        logits = (feats * self.head_weight.reshape(1, t, c)).sum(axis=2)
        return T.sigmoid(logits + self.head_bias.reshape(1, t))

    def forward_det(self, x):
        """Deterministic stream only; this is the inference path."""
        self._check_input(x)
        tokens = self._spatial_tokens(self._encode(x))
        feats, alpha = decouple(tokens, self._embed_const, self.decoupling)
        return self._heads(feats), feats, alpha

    def forward_train(self, x, rng=None, with_perturbed=True, freeze=None):
        """Both streams.  rng must be given when with_perturbed; the
        perturbed pass consumes its draws, the deterministic pass none."""
        det_probs, det_feats, det_alpha = self.forward_det(x)
        out = StreamOutputs(det_probs=det_probs, det_feats=det_feats,
                            det_alpha=det_alpha)
        if with_perturbed:
            if rng is None:
                raise ConfigError("perturbed stream needs a RandomSource")
            tokens = self._spatial_tokens(self._encode(x, rng=rng, freeze=freeze))
            feats, alpha = decouple(tokens, self._embed_const,
                                    self.decoupling_pert)
            out.pert_probs = self._heads(feats)
            out.pert_feats = feats
            out.pert_alpha = alpha
        return out

    def predict(self, x):
        """Probabilities from the deterministic stream, as an ndarray."""
        probs, _, _ = self.forward_det(x)
        return probs.data

    # -- checkpoints ----------------------------------------------------------

    def _blocks(self):
        blocks = dict(self.named_parameters())
        out = {name: p.data for name, p in blocks.items()}
        out["embeddings"] = self.embeddings
        return out

    def save_checkpoint(self, path):
        cfg_json = json.dumps(asdict(self.config), sort_keys=True).encode()
        blocks = self._blocks()
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", CKPT_VERSION))
            fh.write(struct.pack("<I", len(cfg_json)))
            fh.write(cfg_json)
            fh.write(struct.pack("<I", len(blocks)))
            for name in sorted(blocks):
                arr = np.ascontiguousarray(blocks[name], dtype=np.float64)
                nb = name.encode()
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    fh.write(struct.pack("<I", d))
                fh.write(arr.tobytes())

    @staticmethod
    def _parse_checkpoint(path):
        with open(path, "rb") as fh:
            raw = fh.read()

        def take(n, what):
            nonlocal off
            if off + n > len(raw):
                raise CheckpointError(f"{path}: truncated while reading {what}")
            piece = raw[off:off + n]
            off += n
            return piece

        off = 0
        if take(4, "magic") != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(4, "version"))
        if version != CKPT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}"
            )
        (cfg_len,) = struct.unpack("<I", take(4, "config length"))
        try:
            cfg = json.loads(take(cfg_len, "config").decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable config block: {exc}") from None
        (n_blocks,) = struct.unpack("<I", take(4, "block count"))
        blocks = {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", take(2, "block name length"))
            name = take(name_len, "block name").decode()
            (ndim,) = struct.unpack("<B", take(1, f"rank of '{name}'"))
            shape = tuple(
                struct.unpack("<I", take(4, f"dims of '{name}'"))[0]
                for _ in range(ndim)
            )
            count = 1
            for d in shape:
                count *= d
            data = np.frombuffer(
                take(8 * count, f"data of '{name}'"), dtype="<f8"
            ).reshape(shape)
            blocks[name] = np.ascontiguousarray(data)
        if off != len(raw):
            raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
        return cfg, blocks

    @classmethod
    def load_checkpoint(cls, path):
        """Rebuild a model from a checkpoint written by save_checkpoint."""
        cfg_dict, blocks = cls._parse_checkpoint(path)
        try:
            config = ModelConfig(**cfg_dict)
        except (TypeError, ConfigError) as exc:
            raise CheckpointError(f"{path}: bad embedded config: {exc}") from None
        if "embeddings" not in blocks:
            raise CheckpointError(f"{path}: missing 'embeddings' block")
        model = cls(config, blocks["embeddings"], init_seed=0)
        model._restore_blocks(path, blocks)
        return model

    def restore(self, path):
        """Load weights into this model; the file's config must match."""
        cfg_dict, blocks = self._parse_checkpoint(path)
        mine = json.loads(json.dumps(asdict(self.config)))
        if cfg_dict != mine:
            diff = [k for k in sorted(set(cfg_dict) | set(mine))
                    if cfg_dict.get(k) != mine.get(k)]
            raise CheckpointError(
                f"{path}: config mismatch on {', '.join(diff)}"
            )
        self._restore_blocks(path, blocks)

    def _restore_blocks(self, path, blocks):
        params = self.named_parameters()
        expected = set(params) | {"embeddings"}
        missing = expected - set(blocks)
        extra = set(blocks) - expected
        if missing or extra:
            msg = []
            if missing:
                msg.append(f"missing blocks {sorted(missing)}")
            if extra:
                msg.append(f"unexpected blocks {sorted(extra)}")
            raise CheckpointError(f"{path}: {'; '.join(msg)}")
        for name, p in params.items():
            arr = blocks[name]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"{path}: block '{name}' has shape {arr.shape}, "
                    f"model expects {p.data.shape}"
                )
            if not np.isfinite(arr).all():
                raise CheckpointError(f"{path}: block '{name}' has non-finite values")
            p.data = arr.copy()
        emb = blocks["embeddings"]
        if emb.shape != self.embeddings.shape:
            raise CheckpointError(
                f"{path}: embeddings shape {emb.shape}, model expects "
                f"{self.embeddings.shape}"
            )
        self.embeddings = emb.copy()
        self._embed_const = constant(self.embeddings)
