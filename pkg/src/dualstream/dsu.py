"""Feature-statistics uncertainty injection.

Treats each instance's per-channel mean and std as draws from a
distribution whose spread is estimated across the batch.  The perturbed
stream resamples shift and scale per instance and channel:

    beta  = mu    + eps1 * spread(mu)
    gamma = sigma + eps2 * spread(sigma)
    out   = gamma * (x - mu) / sigma + beta

which we compute in the equivalent additive arrangement

    out = x + c2 * (x - mu) / sigma + c1,   c1 = eps1*spread(mu),
                                            c2 = eps2*spread(sigma)

so that channels with zero batch spread contribute exactly nothing.  A
batch whose instances are all identical short-circuits to the input
tensor unchanged, bit for bit.

Spreads are computed on the graph (gradients flow through them); the
gaussian draws and the zero-spread masks are constants.  ``freeze`` hooks
every such constant so a finite-difference audit can replay them.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, constant

VAR_FLOOR = 1e-16
VAR_CEIL = 1e30


class RandomSource:
    """Seeded gaussian source that counts every scalar drawn.

    The counter lets tests pin down exactly how much randomness a code
    path consumed (e.g. the supervised-only configuration must draw
    nothing at all).
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)
        self.draws = 0

    def normal(self, shape):
        shape = tuple(int(s) for s in shape)
        n = 1
        for s in shape:
            n *= s
        self.draws += n
        return self._gen.standard_normal(shape)

    def reseed(self, seed):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)


def instance_stats(x):
    """Per-instance channel mean and floored std over spatial axes.

    x: Tensor shaped (batch, channel, *spatial).  Returns (mu, sigma)
    tensors shaped (batch, channel); sigma is sqrt of the variance
    clamped below at VAR_FLOOR, so a constant instance gets a tiny
    positive sigma instead of a division blow-up.
    """
    if x.ndim < 3:
        raise ShapeError(
            f"instance_stats needs (batch, channel, spatial...), got {x.shape}"
        )
    spatial = tuple(range(2, x.ndim))
    b, c = x.shape[0], x.shape[1]
    mu = x.mean(axis=spatial)
    var = x.var(axis=spatial)
    sigma = T.sqrt(T.clamp(var, VAR_FLOOR, VAR_CEIL))
    return mu.reshape(b, c), sigma.reshape(b, c)


def _spread(stat, freeze):
    """Batch spread of a (batch, channel) statistic, as a (channel,) tensor.

    Channels where the statistic is constant across the batch are masked
    to exactly zero (detected on the raw values, not the floored
    variance, so float round-off cannot fake a spread).
    """
    var_b = stat.var(axis=0)
    spread = T.sqrt(T.clamp(var_b, VAR_FLOOR, VAR_CEIL))
    ptp = stat.data.max(axis=0) - stat.data.min(axis=0)
    mask = (ptp > 0.0).astype(np.float64)
    if freeze is not None:
        mask = freeze(mask)
    return spread * constant(mask), mask


def dsu_forward(x, rng, scope="std", freeze=None):
    """Perturbed stream forward. x: (batch, channel, *spatial) Tensor.

    rng: RandomSource; two (batch, channel) draws are consumed whenever
    the batch has any spread.  scope picks which second-order statistic
    the scale uncertainty is measured on: "std" spreads the stds (the
    default), "var" spreads the variances and takes the root after
    perturbing.  freeze: optional hook (ndarray -> ndarray) applied to
    every sampled or data-dependent constant, for replayable audits.
    """
    if scope not in ("std", "var"):
        raise ShapeError(f"unknown dsu scope {scope!r}")
    if x.ndim < 3:
        raise ShapeError(
            f"dsu_forward needs (batch, channel, spatial...), got {x.shape}"
        )
    b, c = x.shape[0], x.shape[1]
    spatial = tuple(range(2, x.ndim))

    mu = x.mean(axis=spatial, keepdims=True)
    var = x.var(axis=spatial, keepdims=True)
    sigma = T.sqrt(T.clamp(var, VAR_FLOOR, VAR_CEIL))

    mu_bc = mu.reshape(b, c)
    if scope == "var":
        stat2 = var.reshape(b, c)
    else:
        stat2 = sigma.reshape(b, c)

    spread_mu, mask_mu = _spread(mu_bc, freeze)
    spread_st, mask_st = _spread(stat2, freeze)

    if not mask_mu.any() and not mask_st.any():
        # zero uncertainty everywhere; hand back the input untouched
        return x

    eps1 = rng.normal((b, c))
    eps2 = rng.normal((b, c))
    if freeze is not None:
        eps1 = freeze(eps1)
        eps2 = freeze(eps2)

    c1 = constant(eps1) * spread_mu
    c2 = constant(eps2) * spread_st
    full = (b, c) + (1,) * len(spatial)
    c1 = c1.reshape(full)
    c2 = c2.reshape(full)
    norm = (x - mu) / sigma

    if scope == "var":
        # perturb the variance, renormalize with its root
        gamma = T.sqrt(T.clamp(var + c2, VAR_FLOOR, VAR_CEIL))
        return gamma * norm + (mu + c1)
    return x + c2 * norm + c1
