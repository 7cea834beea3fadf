"""Multichannel adaptive noise cancellation in the STFT domain.

One joint complex FIR regression per frequency bin: the reference channel
is predicted from L delayed frames of every other channel, and the
prediction is subtracted. Coefficients adapt by exponentially weighted
recursive least squares while only noise is present, are frozen at the end
of that context, and the frozen filter is then applied to the query. Bins
never interact, so all per-bin state is stored as stacked arrays and every
update is vectorized over bins.

Regressor layout: for aux channels in ascending index order, each
contributes its last L frames newest first, giving a stacked vector of
length (M-1)*L per bin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    MalformedHeaderError,
    TruncatedDataError,
)
from .stft import Spectrogram, StftConfig, analyze

_STATE_MAGIC = b"CSCL"
_STATE_VERSION = 1


@dataclass(frozen=True)
class CleanerConfig:
    num_mics: int
    taps_per_mic: int = 3
    forgetting_factor: float = 0.9995
    init_diag: float = 0.01
    reference_mic: int = 0

    def __post_init__(self):
        if self.num_mics < 1:
            raise ConfigError("num_mics must be >= 1")
        if self.taps_per_mic < 1:
            raise ConfigError("taps_per_mic must be >= 1")
        if not (0.0 < self.forgetting_factor <= 1.0):
            raise ConfigError("forgetting_factor must be in (0, 1]")
        if self.init_diag <= 0.0:
            raise ConfigError("init_diag must be positive")
        if not (0 <= self.reference_mic < self.num_mics):
            raise ConfigError("reference_mic out of range")

    @property
    def stacked_len(self) -> int:
        """Joint regressor length (M-1)*L."""
        return (self.num_mics - 1) * self.taps_per_mic

    @property
    def aux_channels(self) -> tuple:
        return tuple(m for m in range(self.num_mics) if m != self.reference_mic)


class CleanerState:
    """Per-bin coefficients, inverse correlation matrices, and delay lines.

    Single-writer: adapt/residual calls mutate the delay lines and must be
    serialized externally. Coefficients never change once frozen.
    """

    def __init__(self, config: CleanerConfig, num_bins: int):
        if num_bins < 1:
            raise ConfigError("num_bins must be >= 1")
        d = config.stacked_len
        self.config = config
        self.num_bins = num_bins
        self.u = np.zeros((num_bins, d), dtype=np.complex128)
        self.P = np.broadcast_to(
            np.eye(d, dtype=np.complex128) / config.init_diag,
            (num_bins, d, d)).copy()
        # delay[a, l, k]: aux channel a, lag l (0 = newest), bin k
        self.delay = np.zeros((config.num_mics - 1, config.taps_per_mic, num_bins),
                              dtype=np.complex128)
        self.frozen = False

    def clone(self, reset_delay: bool = False) -> "CleanerState":
        other = CleanerState.__new__(CleanerState)
        other.config = self.config
        other.num_bins = self.num_bins
        other.u = self.u.copy()
        other.P = self.P.copy()
        other.delay = np.zeros_like(self.delay) if reset_delay else self.delay.copy()
        other.frozen = self.frozen
        return other

    def regressor(self) -> np.ndarray:
        """Current stacked delay-line contents, shape (num_bins, (M-1)*L)."""
        return self.delay.transpose(2, 0, 1).reshape(self.num_bins,
                                                     self.config.stacked_len)

    def _push(self, frame: np.ndarray) -> None:
        cfg = self.config
        if frame.shape != (cfg.num_mics, self.num_bins):
            raise ValueError("frame must have shape (num_mics, num_bins)")
        if cfg.num_mics > 1:
            aux = frame[list(cfg.aux_channels)]
            self.delay[:, 1:, :] = self.delay[:, :-1, :]
            self.delay[:, 0, :] = aux


def cleaner_init(config: CleanerConfig, num_bins: int) -> CleanerState:
    """Fresh state: zero coefficients, P = I/init_diag, empty delay lines."""
    return CleanerState(config, num_bins)


def residual(state: CleanerState, frame: np.ndarray) -> np.ndarray:
    """Push a frame and subtract the filtered aux channels from the reference.

    Returns Z(k, n) for every bin. Does not adapt; valid on frozen and
    unfrozen states alike.
    """
    frame = np.asarray(frame, dtype=np.complex128)
    state._push(frame)
    ref = frame[state.config.reference_mic]
    if state.config.stacked_len == 0:
        return ref.copy()
    y = state.regressor()
    return ref - np.einsum("ki,ki->k", np.conj(state.u), y)


def adapt_frame(state: CleanerState, frame: np.ndarray) -> np.ndarray:
    """One exponentially weighted RLS step per bin; returns the prior residual.

    With regressor y and prior residual e = Y0 - u^H y:
        g = P y / (lambda + y^H P y)
        u <- u + g conj(e)
        P <- (P - g y^H P) / lambda
    """
    if state.frozen:
        raise ValueError("cleaner frozen: adaptation is not allowed")
    frame = np.asarray(frame, dtype=np.complex128)
    state._push(frame)
    ref = frame[state.config.reference_mic]
    if state.config.stacked_len == 0:
        return ref.copy()

    lam = state.config.forgetting_factor
    y = state.regressor()
    py = np.einsum("kij,kj->ki", state.P, y)
    # y^H P y is real for Hermitian P; clip rounding noise
    denom = lam + np.real(np.einsum("ki,ki->k", np.conj(y), py))
    g = py / denom[:, None]
    e = ref - np.einsum("ki,ki->k", np.conj(state.u), y)
    state.u += g * np.conj(e)[:, None]
    # y^H P = (P y)^H row vector since P is Hermitian
    state.P -= g[:, :, None] * np.conj(py)[:, None, :]
    state.P /= lam
    # re-symmetrize to keep P Hermitian under accumulated rounding
    state.P = 0.5 * (state.P + np.conj(np.swapaxes(state.P, 1, 2)))
    return e


def freeze(state: CleanerState) -> None:
    """Stop adaptation permanently. Idempotent."""
    state.frozen = True


def context_frame_count(context_len_s: float, stft_config: StftConfig) -> int:
    """Frames lying fully inside [0, context_len_s)."""
    ctx_samples = int(round(context_len_s * stft_config.sample_rate_hz))
    if ctx_samples < stft_config.window_len:
        return 0
    return (ctx_samples - stft_config.window_len) // stft_config.hop_len + 1


def adapt_on_spectrogram(spec: Spectrogram, config: CleanerConfig,
                         num_context_frames: int) -> CleanerState:
    """Adapt on the leading frames of a multichannel spectrogram and freeze."""
    if spec.num_channels != config.num_mics:
        raise ValueError("channel count does not match cleaner config")
    if num_context_frames < config.stacked_len:
        raise ValueError("context too short for the configured filter order")
    if num_context_frames > spec.num_frames:
        raise ValueError("context extends past the spectrogram")
    state = cleaner_init(config, spec.num_bins)
    for n in range(num_context_frames):
        adapt_frame(state, spec.data[:, n, :])
    freeze(state)
    return state


def apply_frozen(state: CleanerState, spec: Spectrogram,
                 start_frame: int = 0) -> Spectrogram:
    """Run the frozen filter over a spectrogram with fresh delay lines.

    Delay lines fill from frame 0 so the filter history is consistent, and
    frames [start_frame:] of the residual are returned. The caller's state
    is not modified. The frozen filter is linear, so components passed
    separately sum to the filtered mixture.
    """
    if not state.frozen:
        raise ValueError("state must be frozen before application")
    if spec.num_channels != state.config.num_mics:
        raise ValueError("channel count does not match cleaner config")
    if not (0 <= start_frame <= spec.num_frames):
        raise ValueError("start_frame out of range")
    scratch = state.clone(reset_delay=True)
    out = np.empty((1, spec.num_frames - start_frame, spec.num_bins),
                   dtype=np.complex128)
    for n in range(spec.num_frames):
        z = residual(scratch, spec.data[:, n, :])
        if n >= start_frame:
            out[0, n - start_frame] = z
    return Spectrogram(out, spec.config)


def clean_utterance(audio: np.ndarray, context_len_s: float,
                    config: CleanerConfig,
                    stft_config: StftConfig | None = None) -> Spectrogram:
    """Adapt on the noise context, freeze, and filter the rest.

    Returns the enhanced single-channel spectrogram covering only frames
    after the context. `audio` is (num_mics, samples).
    """
    stft_config = stft_config or StftConfig()
    audio = np.atleast_2d(np.asarray(audio, dtype=np.float64))
    if audio.shape[0] != config.num_mics:
        raise ValueError("channel count does not match cleaner config")
    ctx_samples = int(round(context_len_s * stft_config.sample_rate_hz))
    if audio.shape[1] <= ctx_samples:
        raise ValueError("audio does not extend past the noise context")
    spec = analyze(audio, stft_config)
    n_ctx = context_frame_count(context_len_s, stft_config)
    state = adapt_on_spectrogram(spec, config, n_ctx)
    # continue with the adaptation-time delay lines across the boundary
    out = np.empty((1, spec.num_frames - n_ctx, spec.num_bins),
                   dtype=np.complex128)
    for n in range(n_ctx, spec.num_frames):
        out[0, n - n_ctx] = residual(state, spec.data[:, n, :])
    return Spectrogram(out, stft_config)


def batch_ls_oracle(spec: Spectrogram, config: CleanerConfig) -> np.ndarray:
    """Direct regularized least-squares solve over all frames of `spec`.

    Builds the same zero-initialized delay-line regressors the recursive
    path sees and solves (sum y y^H + init_diag I) u = sum y conj(Y0) per
    bin by dense factorization. Test oracle for the RLS path.
    """
    if spec.num_channels != config.num_mics:
        raise ValueError("channel count does not match cleaner config")
    d = config.stacked_len
    if d == 0:
        return np.zeros((spec.num_bins, 0), dtype=np.complex128)
    if spec.num_frames < d:
        raise ValueError("need at least (M-1)*L frames")
    k = spec.num_bins
    gram = np.zeros((k, d, d), dtype=np.complex128)
    rhs = np.zeros((k, d), dtype=np.complex128)
    scratch = CleanerState(config, k)
    for n in range(spec.num_frames):
        scratch._push(spec.data[:, n, :])
        y = scratch.regressor()
        gram += y[:, :, None] * np.conj(y)[:, None, :]
        rhs += y * np.conj(spec.data[config.reference_mic, n, :])[:, None]
    gram += config.init_diag * np.eye(d)
    try:
        return np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as err:
        raise ValueError(f"singular normal equations: {err}") from err


def save_state(state: CleanerState, path) -> None:
    """Serialize to the little-endian debug layout: magic, config, u, P."""
    cfg = state.config
    header = struct.pack(
        "<4sIIIIIddB",
        _STATE_MAGIC, _STATE_VERSION,
        cfg.num_mics, cfg.taps_per_mic, cfg.reference_mic, state.num_bins,
        cfg.forgetting_factor, cfg.init_diag, int(state.frozen))
    with open(path, "wb") as f:
        f.write(header)
        f.write(state.u.astype("<c16").tobytes())
        f.write(state.P.astype("<c16").tobytes())
        f.write(state.delay.astype("<c16").tobytes())


def load_state(path) -> CleanerState:
    with open(path, "rb") as f:
        raw = f.read()
    head_len = struct.calcsize("<4sIIIIIddB")
    if len(raw) < head_len:
        raise TruncatedDataError("state file shorter than its header")
    magic, version, mics, taps, ref, num_bins, lam, diag, frozen = struct.unpack_from(
        "<4sIIIIIddB", raw, 0)
    if magic != _STATE_MAGIC:
        raise BadMagicError("not a cleaner state file")
    if version != _STATE_VERSION:
        raise MalformedHeaderError(f"unknown state version {version}")
    config = CleanerConfig(num_mics=mics, taps_per_mic=taps,
                           forgetting_factor=lam, init_diag=diag,
                           reference_mic=ref)
    state = CleanerState(config, num_bins)
    d = config.stacked_len
    counts = (num_bins * d, num_bins * d * d, (mics - 1) * taps * num_bins)
    need = head_len + 16 * sum(counts)
    if len(raw) < need:
        raise TruncatedDataError("state file payload incomplete")
    pos = head_len
    u = np.frombuffer(raw, dtype="<c16", count=counts[0], offset=pos)
    pos += 16 * counts[0]
    p = np.frombuffer(raw, dtype="<c16", count=counts[1], offset=pos)
    pos += 16 * counts[1]
    delay = np.frombuffer(raw, dtype="<c16", count=counts[2], offset=pos)
    state.u = u.reshape(num_bins, d).copy()
    state.P = p.reshape(num_bins, d, d).copy()
    state.delay = delay.reshape(mics - 1, taps, num_bins).copy()
    state.frozen = bool(frozen)
    return state
