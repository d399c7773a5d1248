"""Loss terms for reconstruction, gender confounding and match retention.

Batched inputs reduce as the mean over the batch of the per-image value.
``loss_total`` only accepts the gender and matching terms: the reconstruction
term belongs to pre-training and neutral-prototype outputs never enter a loss.
"""
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .nncore import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_D: float = 1.0
    lambda_G: float = 1.0
    lambda_M: float = 1.0

    def __post_init__(self):
        for k in ("lambda_D", "lambda_G", "lambda_M"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")


def _batch_size(t):
    return t.shape[0] if t.ndim == 4 else 1


def loss_JD(x, x_sm):
    """Pixelwise cross-entropy between input ``x`` (target) and reconstruction ``x_sm``."""
    target = x.data if isinstance(x, Tensor) else np.asarray(x)
    if target.shape != tuple(x_sm.shape):
        raise ValueError(f"shape mismatch: input {target.shape} vs reconstruction {x_sm.shape}")
    total = nn.binary_cross_entropy(target, x_sm)
    n = _batch_size(x_sm)
    return total if n == 1 else total * (1.0 / n)


def loss_JG(y, p_sm, p_op):
    """Cross-entropy on the true label for the SM output plus on the flipped label for OP."""
    y = np.asarray(y, dtype=np.float64)
    p_sm, p_op = nn.as_tensor(p_sm), nn.as_tensor(p_op)
    y = np.broadcast_to(y, p_sm.shape)
    n = p_sm.size
    total = nn.binary_cross_entropy(y, p_sm) + nn.binary_cross_entropy(1.0 - y, p_op)
    return total if n == 1 else total * (1.0 / n)


def loss_JM(e_x, e_sm):
    """Squared Euclidean distance between descriptors of the original and SM images."""
    e_x = e_x if isinstance(e_x, Tensor) else Tensor(np.asarray(e_x, dtype=np.float64))
    e_sm = nn.as_tensor(e_sm)
    if e_x.shape != e_sm.shape:
        raise ValueError(f"descriptor length mismatch: {e_x.shape} vs {e_sm.shape}")
    total = nn.square(e_sm - e_x).sum()
    n = e_sm.shape[0] if e_sm.ndim == 2 else 1
    return total if n == 1 else total * (1.0 / n)


def loss_total(jg, jm, weights=LossWeights()):
    return jg * weights.lambda_G + jm * weights.lambda_M
