"""Training objectives: multi-resolution reconstruction and the GAN losses.

The reconstruction loss compares prediction and truth at every dyadic
scale from full resolution down to 1x1.  Sum pooling preserves totals,
so the coarsest level scores nothing but the global unit count, while
level 0 scores exact cell placement; the per-level weights decay by 4x
per level and are normalized to sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import Tensor, mse, sumpool

LOG_EPS = 1e-7


def pyramid_weights(r: int) -> np.ndarray:
    """Normalized per-level weights 4^-i / sum_k 4^-k for levels 0..log2(r)."""
    if r < 1 or (r & (r - 1)) != 0:
        raise ValueError(f"pyramid: resolution {r} is not a power of two")
    levels = r.bit_length()  # log2(r) + 1
    raw = 4.0 ** -np.arange(levels, dtype=np.float64)
    return raw / raw.sum()


@dataclass(frozen=True)
class PyramidConfig:
    resolution: int = 32

    def __post_init__(self):
        pyramid_weights(self.resolution)  # validates

    @property
    def levels(self) -> int:
        return self.resolution.bit_length()

    @property
    def weights(self) -> np.ndarray:
        return pyramid_weights(self.resolution)


@dataclass(frozen=True)
class LossWeights:
    rec: float = 0.999
    adv: float = 0.001

    def __post_init__(self):
        if self.rec < 0 or self.adv < 0:
            raise ValueError(f"loss weights must be non-negative, "
                             f"got rec={self.rec} adv={self.adv}")


def rec_loss(pred: Tensor, true: Tensor, pyramid: PyramidConfig) -> Tensor:
    """Weighted sum over levels i of MSE(sumpool(pred, 2^i), sumpool(true, 2^i))."""
    if pred.shape != true.shape:
        raise ValueError(f"rec_loss: shape mismatch {pred.shape} vs {true.shape}")
    r = pyramid.resolution
    if pred.shape[-1] != r or pred.shape[-2] != r:
        raise ValueError(f"rec_loss: spatial extent {pred.shape[-2:]} "
                         f"does not match pyramid resolution {r}")
    weights = pyramid.weights
    total = None
    for i in range(pyramid.levels):
        s = 2 ** i
        term = mse(sumpool(pred, s), sumpool(true, s)) * float(weights[i])
        total = term if total is None else total + term
    return total


def adv_loss_G(d_fake: Tensor, non_saturating: bool = False) -> Tensor:
    """Generator objective from the discriminator's verdict on fakes.

    The faithful form is mean(log(1 - d)); minimizing it pushes d up.  The
    non-saturating variant -mean(log d) has the same fixed point with
    stronger early gradients and sits behind a flag, default off.
    """
    d = d_fake.clamp(LOG_EPS, 1.0 - LOG_EPS)
    if non_saturating:
        return -(d.log().mean())
    return (1.0 - d).log().mean()


def loss_D(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Binary cross-entropy pushing d_real toward 1 and d_fake toward 0."""
    r = d_real.clamp(LOG_EPS, 1.0 - LOG_EPS)
    f = d_fake.clamp(LOG_EPS, 1.0 - LOG_EPS)
    return -(r.log().mean()) - ((1.0 - f).log().mean())


def total_G(rec: Tensor, adv: Tensor, weights: LossWeights) -> Tensor:
    return rec * weights.rec + adv * weights.adv
