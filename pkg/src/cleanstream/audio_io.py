"""RIFF/WAVE reading and writing (PCM16 and IEEE float32).

Storage is interleaved on disk and deinterleaved in memory as
(channel, sample). Unknown chunks are skipped on read. Values are clamped
to [-1, 1] on write; out-of-range float data on read raises instead of
being silently clamped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedCodecError,
)

_PCM16_SCALE = 32768.0


@dataclass
class AudioBuffer:
    """Deinterleaved audio, samples indexed (channel, sample) in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = s[np.newaxis, :]
        if s.ndim != 2:
            raise ValueError("samples must be (channels, n)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.samples = s

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def channel(self, m: int) -> np.ndarray:
        return self.samples[m]


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or IEEE float32 WAV file."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise MalformedHeaderError("file too short for RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedHeaderError("not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise MalformedHeaderError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise TruncatedDataError("data chunk shorter than declared size")
            data = body
        # other chunks are skipped; chunk bodies are word-aligned
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise MalformedHeaderError("missing fmt chunk")
    if data is None:
        raise TruncatedDataError("missing data chunk")

    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise MalformedHeaderError("channel count must be >= 1")

    if audio_format == 1 and bits == 16:
        if len(data) % (2 * channels):
            raise TruncatedDataError("data chunk ends mid-frame")
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / _PCM16_SCALE
        samples = flat.reshape(-1, channels).T
    elif audio_format == 3 and bits == 32:
        if len(data) % (4 * channels):
            raise TruncatedDataError("data chunk ends mid-frame")
        flat = np.frombuffer(data, dtype="<f4")
        samples = flat.reshape(-1, channels).T.copy()
        if samples.size and (np.max(samples) > 1.0 or np.min(samples) < -1.0):
            raise ValueError("float sample out of range [-1, 1]")
    else:
        raise UnsupportedCodecError(
            f"unsupported codec: format={audio_format}, bits={bits}")

    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path, sample_format: str = "float32") -> None:
    """Write a WAV file as 'float32' or 'pcm16'. Values are clamped to [-1, 1]."""
    x = np.clip(buffer.samples, -1.0, 1.0)
    channels = buffer.num_channels
    if sample_format == "pcm16":
        ints = np.round(x * _PCM16_SCALE)
        payload = np.clip(ints, -32768, 32767).astype("<i2").T.tobytes()
        audio_format, bits = 1, 16
    elif sample_format == "float32":
        payload = x.astype("<f4").T.tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown sample format: {sample_format!r}")

    block_align = channels * bits // 8
    byte_rate = buffer.sample_rate_hz * block_align
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, channels, buffer.sample_rate_hz,
        byte_rate, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as f:
        f.write(header + payload)
