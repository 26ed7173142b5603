"""Text-guided semantic decoupling.

Each task gets a fixed text embedding.  Spatial feature vectors are
scored against each task embedding through a small bilinear-gated
attention, softmaxed over positions, and the features are pooled with
those weights.  The result is one feature vector per (instance, task):
shape (batch, tasks, channels).

Score for position i and task t:

    s[t, i] = v . tanh((F[i] @ w_feat) * (d[t] @ w_text))

Embeddings are loaded from a plain text file or generated as random unit
vectors when no curated ones exist.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataFormatError, ShapeError
from .tensor import Tensor, constant


class DecouplingParams:
    """The three learnable blocks of the attention: w_feat (C, d),
    w_text (E, d), v (d,)."""

    def __init__(self, w_feat, w_text, v):
        self.w_feat = w_feat
        self.w_text = w_text
        self.v = v

    def named(self, prefix):
        return {
            f"{prefix}.w_feat": self.w_feat,
            f"{prefix}.w_text": self.w_text,
            f"{prefix}.v": self.v,
        }


def init_decoupling_params(channels, embed_dim, attn_dim, rng):
    """He-uniform init on the two projections, small uniform on the gate."""
    def he(fan_in, shape):
        bound = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return DecouplingParams(
        w_feat=he(channels, (channels, attn_dim)),
        w_text=he(embed_dim, (embed_dim, attn_dim)),
        v=he(attn_dim, (attn_dim,)),
    )


def decouple(features, embeds, params):
    """features: Tensor (B, N, C); embeds: Tensor (T, E), constant.

    Returns (pooled, alpha): pooled (B, T, C) task-specific features and
    alpha (B, T, N) attention weights summing to one over positions.
    """
    if features.ndim != 3:
        raise ShapeError(f"decouple expects (batch, positions, channels), got {features.shape}")
    if embeds.ndim != 2:
        raise ShapeError(f"decouple expects (tasks, embed_dim) embeddings, got {embeds.shape}")
    b, n, c = features.shape
    t, e = embeds.shape
    if params.w_feat.shape[0] != c:
        raise ShapeError(
            f"w_feat expects {params.w_feat.shape[0]} channels, features have {c}"
        )
    if params.w_text.shape[0] != e:
        raise ShapeError(
            f"w_text expects {params.w_text.shape[0]}-dim embeddings, got {e}"
        )
    d = params.w_feat.shape[1]

    fproj = (features.reshape(b * n, c) @ params.w_feat).reshape(b, 1, n, d)
    tproj = (embeds @ params.w_text).reshape(1, t, 1, d)
    gate = T.tanh(fproj * tproj)                      # (B, T, N, d)
    scores = (gate * params.v.reshape(1, 1, 1, d)).sum(axis=3)   # (B, T, N)
    alpha = T.softmax(scores, axis=2)
    pooled = (alpha.reshape(b, t, n, 1) * features.reshape(b, 1, n, c)).sum(axis=2)
    return pooled, alpha


# ---------------------------------------------------------------------------
# embedding files


def pseudo_text_embeddings(num_tasks, dim, seed, min_separation=0.1, max_tries=100):
    """Random unit-norm stand-ins for curated task descriptions.

    Redraws until all pairwise distances clear min_separation, failing
    after max_tries (can only happen with absurd task counts for the
    dimension).
    """
    if num_tasks < 1 or dim < 1:
        raise ConfigError(f"bad embedding size: {num_tasks} tasks, dim {dim}")
    gen = np.random.default_rng(seed)
    for _ in range(max_tries):
        raw = gen.standard_normal((num_tasks, dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            continue
        unit = raw / norms
        if num_tasks == 1:
            return unit
        d2 = np.sum((unit[:, None, :] - unit[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        if np.sqrt(d2.min()) >= min_separation:
            return unit
    raise ConfigError(
        f"could not draw {num_tasks} embeddings of dim {dim} separated by "
        f"{min_separation} in {max_tries} tries"
    )


def save_embeddings(path, embeds):
    embeds = np.asarray(embeds, dtype=np.float64)
    if embeds.ndim != 2:
        raise ShapeError(f"embeddings must be 2-d, got shape {embeds.shape}")
    with open(path, "w") as fh:
        fh.write(f"{embeds.shape[0]} {embeds.shape[1]}\n")
        for row in embeds:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path):
    """Parse the text format written by save_embeddings.

    Raises DataFormatError with a 1-based line number on any problem.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: line 1: empty embedding file")
    head = lines[0].split()
    if len(head) != 2:
        raise DataFormatError(
            f"{path}: line 1: expected 'tasks dim' header, got {lines[0]!r}"
        )
    try:
        t, e = int(head[0]), int(head[1])
    except ValueError:
        raise DataFormatError(
            f"{path}: line 1: non-integer header {lines[0]!r}"
        ) from None
    if t < 1 or e < 1:
        raise DataFormatError(f"{path}: line 1: sizes must be positive, got {t} {e}")
    body = [ln for ln in lines[1:]]
    if len(body) < t:
        raise DataFormatError(
            f"{path}: line {len(lines) + 1}: expected {t} rows, file ends after {len(body)}"
        )
    out = np.empty((t, e), dtype=np.float64)
    for r in range(t):
        parts = body[r].split()
        lineno = r + 2
        if len(parts) != e:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {e} values, got {len(parts)}"
            )
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise DataFormatError(
                f"{path}: line {lineno}: unparsable value in {body[r]!r}"
            ) from None
        if not np.all(np.isfinite(row)):
            raise DataFormatError(f"{path}: line {lineno}: non-finite value")
        out[r] = row
    return out
