"""Training losses and the RMSprop optimizer.

Losses reduce by the mean over all elements. They accept tape values and
plain arrays alike, so the same code scores a batch and differentiates it.
"""
from typing import Dict, Iterable, Optional

import numpy as np

from shared.types import SceneValidationError
from shared.utils import autodiff as ad
from shared.utils.autodiff import ArrayLike, ParameterStore, value_of


def _same_shape(a: ArrayLike, b: ArrayLike, what: str) -> None:
    if value_of(a).shape != value_of(b).shape:
        raise SceneValidationError(f"{what}: shapes differ, {value_of(a).shape} vs {value_of(b).shape}")


def loss_rgb(rendered: ArrayLike, target: ArrayLike) -> ArrayLike:
    """Mean squared error over rays and channels."""
    _same_shape(rendered, target, "loss_rgb")
    return ad.mean(ad.square(ad.sub(rendered, target)))


def loss_gscore(score: ArrayLike, label: ArrayLike, lam: float) -> ArrayLike:
    """Asymmetric least squares: λ·relu(S − Ŝ)² + relu(Ŝ − S)², averaged.

    Over-prediction costs λ times less than under-prediction, so a position with
    both stable and unstable labelled grasps is pushed towards a high score.
    """
    _same_shape(score, label, "loss_gscore")
    over = ad.square(ad.relu(ad.sub(score, label)))
    under = ad.square(ad.relu(ad.sub(label, score)))
    return ad.mean(ad.add(ad.mul(over, lam), under))


def loss_grot(rotation: ArrayLike, label: ArrayLike, label_score: ArrayLike) -> ArrayLike:
    """Ŝ-weighted squared rotation error: mean over annotations of Ŝ · mean of the 9 squared differences."""
    _same_shape(rotation, label, "loss_grot")
    weights = np.asarray(label_score, dtype=np.float64).reshape(-1, 1, 1)
    if weights.shape[0] != value_of(rotation).reshape(-1, 3, 3).shape[0]:
        raise SceneValidationError("loss_grot: one label score per rotation is required")
    diff = ad.reshape(ad.sub(rotation, label), (-1, 3, 3))
    return ad.mean(ad.mul(ad.square(diff), weights))


def psnr_from_mse(mse: float) -> float:
    return float("inf") if mse <= 0.0 else -10.0 * float(np.log10(mse))


class RMSprop:
    """RMSprop without momentum: v ← ρv + (1 − ρ)g², θ ← θ − lr · g / (√v + ε)."""

    def __init__(self, lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-8):
        if lr <= 0.0 or not 0.0 <= decay < 1.0 or eps <= 0.0:
            raise SceneValidationError("RMSprop needs lr > 0, 0 <= decay < 1 and eps > 0")
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.square_avg: Dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, params: ParameterStore, grads: Dict[str, np.ndarray],
             names: Optional[Iterable[str]] = None) -> None:
        """Update `names` (default: every gradient given) in place."""
        for name in (grads if names is None else names):
            g = np.asarray(grads[name], dtype=np.float64)
            avg = self.square_avg.get(name)
            if avg is None:
                avg = np.zeros_like(g)
            avg = self.decay * avg + (1.0 - self.decay) * g * g
            self.square_avg[name] = avg
            params.set(name, params[name] - self.lr * g / (np.sqrt(avg) + self.eps))
        self.steps += 1
