"""Ideal ratio masks, inference-time mask application, and the spectral loss.

The IRM is computed in mel space as X/(X+N) under a speech/noise
uncorrelatedness assumption. At inference the estimated mask is floored at
beta and compressed with exponent alpha before pointwise multiplication,
trading noise suppression for lower speech distortion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import MelSpectrogram

_DENOM_EPS = 1e-12


@dataclass
class Mask:
    """Per-(frame, mel bin) values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("mask values must be (frames, mel)")
        if v.size and (np.min(v) < 0.0 or np.max(v) > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        self.values = v

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MaskPostConfig:
    """Exponential mask scalar alpha and mask floor beta."""

    alpha: float = 0.5
    beta: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError("alpha must be in (0, 1]")
        if not (0.0 <= self.beta < 1.0):
            raise ConfigError("beta must be in [0, 1)")


def ideal_ratio_mask(speech: MelSpectrogram, noise: MelSpectrogram) -> Mask:
    """Oracle mask X/(X+N); cells where both sources are silent map to 0."""
    for mel in (speech, noise):
        if mel.is_log:
            raise ValueError("IRM expects linear mel magnitudes")
    x = speech.values
    n = noise.values
    if x.shape != n.shape:
        raise ValueError("shape mismatch between speech and noise mel")
    denom = x + n
    out = np.zeros_like(denom)
    np.divide(x, denom, out=out, where=denom >= _DENOM_EPS)
    return Mask(out)


def apply_mask(noisy: MelSpectrogram, mask: Mask,
               config: MaskPostConfig = MaskPostConfig()) -> MelSpectrogram:
    """Multiply the noisy mel by max(mask, beta)**alpha."""
    if noisy.is_log:
        raise ValueError("apply_mask expects a linear mel spectrogram")
    if noisy.values.shape != mask.values.shape:
        raise ValueError("shape mismatch between mel and mask")
    mult = np.maximum(mask.values, config.beta) ** config.alpha
    return MelSpectrogram(noisy.values * mult, is_log=False, config=noisy.config)


def mask_multiplier(value: float, config: MaskPostConfig = MaskPostConfig()) -> float:
    """Scalar gain applied to a mel cell with the given mask value."""
    return max(value, config.beta) ** config.alpha


def spectral_loss(target: Mask, estimate: Mask) -> float:
    """Sum over all cells of |d| + d**2, d = target - estimate."""
    if target.values.shape != estimate.values.shape:
        raise ValueError("shape mismatch between target and estimate")
    d = target.values - estimate.values
    return float(np.sum(np.abs(d) + d * d))


def loss_gradient(target: Mask, estimate: Mask) -> np.ndarray:
    """Elementwise d(loss)/d(estimate) = -sign(d) - 2d away from d = 0."""
    if target.values.shape != estimate.values.shape:
        raise ValueError("shape mismatch between target and estimate")
    d = target.values - estimate.values
    return -np.sign(d) - 2.0 * d
