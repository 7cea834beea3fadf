"""Log-mel feature extraction and two-source frame stacking.

Mel bands are triangular on the mel scale mel(f) = 2595*log10(1 + f/700)
and are applied to STFT magnitudes (not powers). Each triangle is
integrated over every FFT bin cell rather than point-sampled at bin
centers; with 128 bands on a 512-point FFT the lowest triangles are
narrower than one bin and point sampling would leave them empty.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .stft import Spectrogram, StftConfig

STACK_WIDTH = 4
STACK_HOP = 3  # base frames per stacked step (30 ms at a 10 ms hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelConfig:
    num_mel: int = 128
    fmin_hz: float = 125.0
    fmax_hz: float = 7500.0
    log_floor: float = 1e-5
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.num_mel < 1:
            raise ConfigError("num_mel must be >= 1")
        if not (0.0 <= self.fmin_hz < self.fmax_hz <= self.stft.sample_rate_hz / 2):
            raise ConfigError("require 0 <= fmin < fmax <= sample_rate/2")
        if self.log_floor <= 0.0:
            raise ConfigError("log_floor must be positive")

    def hash_u64(self) -> int:
        """Stable 64-bit digest for binary containers."""
        key = (f"{self.num_mel},{self.fmin_hz},{self.fmax_hz},{self.log_floor},"
               f"{self.stft.sample_rate_hz},{self.stft.window_len},"
               f"{self.stft.hop_len},{self.stft.fft_size}")
        digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")


@dataclass
class MelSpectrogram:
    """Mel energies indexed (frame, mel bin); linear magnitudes or their log."""

    values: np.ndarray
    is_log: bool
    config: MelConfig

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("values must be (frames, mel)")
        if not self.is_log and v.size and np.min(v) < 0.0:
            raise ValueError("linear mel values must be nonnegative")
        self.values = v

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class StackedFeatures:
    """Model input: per stacked frame, 4 raw log-mel frames then 4 cleaned
    ones, oldest first, at a hop of 3 base frames."""

    values: np.ndarray
    anchor_frames: np.ndarray  # newest base-frame index per stacked frame

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.values.shape[1]


def _triangle_cell_weights(lo, center, hi, edges):
    """Mean of the triangle (lo, center, hi) over each cell [edges[i], edges[i+1])."""
    a = edges[:-1]
    b = edges[1:]

    def rising(x0, x1):
        x0 = np.clip(x0, lo, center)
        x1 = np.clip(x1, lo, center)
        return ((x1 - lo) ** 2 - (x0 - lo) ** 2) / (2.0 * (center - lo))

    def falling(x0, x1):
        x0 = np.clip(x0, center, hi)
        x1 = np.clip(x1, center, hi)
        return ((hi - x0) ** 2 - (hi - x1) ** 2) / (2.0 * (hi - center))

    return (rising(a, b) + falling(a, b)) / (b - a)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular filterbank matrix of shape (num_mel, num_bins).

    Rows are nonnegative and unimodal with monotonically increasing center
    frequencies. Raises if any band ends up with no spectral support.
    """
    stft = config.stft
    num_bins = stft.num_bins
    df = stft.sample_rate_hz / stft.fft_size
    bin_centers = np.arange(num_bins) * df
    cell_edges = np.concatenate([bin_centers - df / 2.0, [bin_centers[-1] + df / 2.0]])

    band_edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz),
                                       hz_to_mel(config.fmax_hz),
                                       config.num_mel + 2))
    weights = np.zeros((config.num_mel, num_bins))
    for i in range(config.num_mel):
        lo, center, hi = band_edges[i], band_edges[i + 1], band_edges[i + 2]
        if not (lo < center < hi):
            raise ConfigError("num_mel too large: degenerate mel band")
        weights[i] = _triangle_cell_weights(lo, center, hi, cell_edges)
    if np.any(~weights.any(axis=1)):
        raise ConfigError("num_mel too large for the FFT resolution: empty band")
    return weights


def band_center_frequencies(config: MelConfig) -> np.ndarray:
    """Triangle peak frequencies in Hz, equally spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz),
                                 hz_to_mel(config.fmax_hz),
                                 config.num_mel + 2))[1:-1]


def to_mel(spec: Spectrogram, config: MelConfig, channel: int = 0,
           filterbank: np.ndarray | None = None) -> MelSpectrogram:
    """Project one channel's STFT magnitudes onto the mel bands."""
    if spec.num_bins != config.stft.num_bins:
        raise ValueError("spectrogram bin count does not match mel config")
    w = mel_filterbank(config) if filterbank is None else filterbank
    mag = np.abs(spec.data[channel])
    return MelSpectrogram(mag @ w.T, is_log=False, config=config)


def to_log(mel: MelSpectrogram) -> MelSpectrogram:
    """Natural-log compression with flooring at config.log_floor."""
    if mel.is_log:
        raise ValueError("mel spectrogram is already log compressed")
    values = np.log(np.maximum(mel.values, mel.config.log_floor))
    return MelSpectrogram(values, is_log=True, config=mel.config)


def stack(raw: MelSpectrogram, cleaned: MelSpectrogram) -> StackedFeatures:
    """Interleave two log-mel streams into the model's stacked input.

    Stacked frame t concatenates base frames [3t-3 .. 3t] from the raw
    stream then the cleaned stream, oldest first; frames before the start
    repeat frame 0.
    """
    if raw.values.shape != cleaned.values.shape:
        raise ValueError("frame-count mismatch between raw and cleaned streams")
    if not (raw.is_log and cleaned.is_log):
        raise ValueError("stack expects log-compressed inputs")
    n = raw.num_frames
    if n == 0:
        raise ValueError("cannot stack an empty mel spectrogram")
    anchors = np.arange(0, n, STACK_HOP)
    offsets = np.arange(-(STACK_WIDTH - 1), 1)
    idx = np.maximum(anchors[:, None] + offsets[None, :], 0)
    num_mel = raw.values.shape[1]
    rows = np.concatenate(
        [raw.values[idx].reshape(len(anchors), STACK_WIDTH * num_mel),
         cleaned.values[idx].reshape(len(anchors), STACK_WIDTH * num_mel)],
        axis=1)
    return StackedFeatures(rows, anchors)
