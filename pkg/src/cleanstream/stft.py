"""Windowed short-time Fourier analysis and overlap-add synthesis.

Analysis uses a periodic Hann window with no centering: frame n covers
samples [n*hop, n*hop + window_len), so the first frame starts at sample 0
and sample indices map exactly to frame indices. Synthesis uses the
least-squares dual of the analysis window, which reconstructs interior
samples exactly for any hop that leaves no gaps (plain Hann overlap-add is
not constant at a 512/160 configuration; the dual window is).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_COLA_TOL = 1e-10


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults give a 32 ms window / 10 ms hop at 16 kHz."""

    sample_rate_hz: int = 16000
    window_len: int = 512
    hop_len: int = 160
    fft_size: int = 512
    window_kind: str = "hann"

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if not (0 < self.hop_len <= self.window_len <= self.fft_size):
            raise ConfigError("require hop_len <= window_len <= fft_size")
        if self.window_kind != "hann":
            raise ConfigError(f"unknown window kind: {self.window_kind!r}")
        # Numerical overlap-add check: the analysis/synthesis pair must tile
        # to exactly 1 on the interior, which fails when hops leave gaps.
        w, d = _window_pair(self)
        period = self.hop_len
        tiles = np.zeros(period)
        prod = w * d
        for off in range(0, self.window_len, period):
            chunk = prod[off:off + period]
            tiles[:len(chunk)] += chunk
        if np.max(np.abs(tiles - 1.0)) > _COLA_TOL:
            raise ConfigError("window/hop pair violates overlap-add reconstruction")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop_len

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len:
            return 0
        return (num_samples - self.window_len) // self.hop_len + 1

    def analysis_window(self) -> np.ndarray:
        return _window_pair(self)[0].copy()

    def synthesis_window(self) -> np.ndarray:
        return _window_pair(self)[1].copy()


def _window_pair(config: StftConfig) -> tuple[np.ndarray, np.ndarray]:
    """Analysis window and its least-squares dual at the configured hop."""
    n, hop = config.window_len, config.hop_len
    w = _hann_periodic(n)
    # Periodized squared-window energy; must be bounded away from zero for
    # the dual to exist (no gaps between hops).
    denom = np.zeros(hop)
    for off in range(0, n, hop):
        chunk = w[off:off + hop] ** 2
        denom[:len(chunk)] += chunk
    if np.min(denom) < 1e-12:
        raise ConfigError("window/hop pair leaves gaps (overlap-add impossible)")
    dual = w / denom[np.arange(n) % hop]
    return w, dual


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT values indexed (channel, frame, bin)."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("spectrogram data must be (channels, frames, bins)")
        if self.data.shape[2] != self.config.num_bins:
            raise ValueError("bin count does not match config fft_size")
        self.data.flags.writeable = False

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]

    def channel(self, m: int) -> "Spectrogram":
        return Spectrogram(self.data[m:m + 1].copy(), self.config)

    def frames(self, start: int, stop: int | None = None) -> "Spectrogram":
        return Spectrogram(self.data[:, start:stop].copy(), self.config)


def analyze(signal: np.ndarray, config: StftConfig) -> Spectrogram:
    """Forward STFT of a mono (T,) or multichannel (C, T) signal.

    No implicit padding: the number of frames is
    floor((T - window_len) / hop_len) + 1 and bin 0 is DC.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.size == 0:
        raise ValueError("signal must be a non-empty 1-D or 2-D array")
    if x.shape[1] < config.window_len:
        raise ValueError("insufficient samples: signal shorter than one window")
    w = _window_pair(config)[0]
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_len, axis=1)
    frames = frames[:, ::config.hop_len, :]
    spec = np.fft.rfft(frames * w, n=config.fft_size, axis=2)
    return Spectrogram(spec, config)


def synthesize(spec: Spectrogram, channel: int = 0) -> np.ndarray:
    """Overlap-add resynthesis of one channel.

    Output length is (frames - 1) * hop + window_len, matching the sample
    span the analysis frames covered. Interior samples (at least one full
    window away from either end) reproduce the analysis input exactly.
    """
    if not (0 <= channel < spec.num_channels):
        raise ValueError("channel out of range")
    config = spec.config
    dual = _window_pair(config)[1]
    frames = np.fft.irfft(spec.data[channel], n=config.fft_size, axis=1)
    frames = frames[:, :config.window_len] * dual
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * config.hop_len + config.window_len)
    for i in range(n_frames):
        start = i * config.hop_len
        out[start:start + config.window_len] += frames[i]
    return out


def interior_slice(config: StftConfig, num_samples: int) -> slice:
    """Sample range over which analyze->synthesize is exact."""
    return slice(config.window_len, num_samples - config.window_len)
