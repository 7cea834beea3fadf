"""Scene construction: far-field delay-and-gain array simulation, SNR
mixing, and the noise-context prefix.

Every scene is built so the mixture is the bit-exact float32 sum of its
stored speech and noise images, and the speech image is identically zero
before the context boundary. That exactness is what lets the evaluation
pipeline track clean and noise components separately through any linear
enhancement stage and compute oracle masks. Reverberation is out of scope;
propagation is pure delay per microphone.

All randomness (direction draws, utterance/noise pairing, sub-seeds) comes
from the SplitMix64 stream in `rng`, so manifests regenerate byte-identically
from a seed on any platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, read_wav, write_wav
from .errors import ConfigError
from .rng import SplitMix64, derive_seed

_SINC_TAPS = 32
# zeros prepended to the speech source so interpolation pre-ring from the
# sinc kernel can never leak across the context boundary
_ONSET_GUARD = 64
_PEAK_TARGET = 0.9


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters; mic 0 is the reference."""

    mic_positions: tuple
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = tuple(tuple(float(c) for c in p) for p in self.mic_positions)
        if len(pos) < 1:
            raise ConfigError("need at least one microphone")
        if any(len(p) != 3 for p in pos):
            raise ConfigError("mic positions must be 3-D coordinates")
        if len(set(pos)) != len(pos):
            raise ConfigError("mic positions must be distinct")
        if self.speed_of_sound <= 0:
            raise ConfigError("speed of sound must be positive")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    def positions(self) -> np.ndarray:
        return np.asarray(self.mic_positions, dtype=np.float64)

    def prefix(self, num_mics: int) -> "ArrayGeometry":
        if not (1 <= num_mics <= self.num_mics):
            raise ConfigError("prefix size out of range")
        return ArrayGeometry(self.mic_positions[:num_mics], self.speed_of_sound)


# 7.1 cm spacing: mics 0-1 are the top pair, mic 2 completes an equilateral
# triangle, mic 3 sits below the plane at the front of the device
_DEFAULT_POSITIONS = (
    (0.0, 0.0, 0.0),
    (0.071, 0.0, 0.0),
    (0.0355, 0.0614878, 0.0),
    (0.0355, 0.0205, -0.05),
)


def default_geometry(num_mics: int = 3) -> ArrayGeometry:
    if not (1 <= num_mics <= len(_DEFAULT_POSITIONS)):
        raise ConfigError(f"default geometry supports 1..{len(_DEFAULT_POSITIONS)} mics")
    return ArrayGeometry(_DEFAULT_POSITIONS[:num_mics])


def _unit(v) -> tuple:
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ConfigError("direction vector must be nonzero")
    return tuple(float(c) for c in arr / norm)


@dataclass(frozen=True)
class SceneConfig:
    """Mixing and geometry parameters for one scene.

    snr_db may be +inf (clean scene, no noise) or -inf (noise only:
    speech gain zero, noise gain one).
    """

    snr_db: float
    noise_context_s: float = 6.0
    speech_direction: tuple = (1.0, 0.0, 0.0)
    noise_directions: tuple = ((0.0, 1.0, 0.0),)
    seed: int = 0
    geometry: ArrayGeometry = field(default_factory=default_geometry)

    def __post_init__(self):
        if self.noise_context_s < 0:
            raise ConfigError("noise_context_s must be >= 0")
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db must not be NaN")
        object.__setattr__(self, "speech_direction", _unit(self.speech_direction))
        dirs = self.noise_directions
        if not dirs:
            raise ConfigError("need at least one noise direction")
        object.__setattr__(self, "noise_directions", tuple(_unit(d) for d in dirs))


@dataclass
class Scene:
    """A mixture plus its exact decomposition.

    mixture == speech_image + noise_image holds bit-exactly (all three are
    float32 and the sum is computed in float32). The speech image is zero
    everywhere before context_boundary.
    """

    mixture: np.ndarray       # (mics, samples) float32
    speech_image: np.ndarray  # (mics, samples) float32, includes source gain
    noise_image: np.ndarray   # (mics, samples) float32, includes mixing gain
    context_boundary: int     # sample index where the query may begin
    sample_rate_hz: int
    config: SceneConfig
    scene_id: str = ""

    @property
    def num_mics(self) -> int:
        return self.mixture.shape[0]

    @property
    def num_samples(self) -> int:
        return self.mixture.shape[1]

    @property
    def clean_ref(self) -> np.ndarray:
        return self.speech_image[0]

    @property
    def noise_ref(self) -> np.ndarray:
        return self.noise_image[0]

    def channel_prefix(self, num_mics: int) -> "Scene":
        """Restrict to the first num_mics channels (nested geometry)."""
        if not (1 <= num_mics <= self.num_mics):
            raise ValueError("num_mics out of range")
        cfg = SceneConfig(self.config.snr_db, self.config.noise_context_s,
                          self.config.speech_direction, self.config.noise_directions,
                          self.config.seed, self.config.geometry.prefix(num_mics))
        return Scene(self.mixture[:num_mics], self.speech_image[:num_mics],
                     self.noise_image[:num_mics], self.context_boundary,
                     self.sample_rate_hz, cfg, self.scene_id)

    def measured_snr_db(self) -> float:
        """SNR recomputed from the stored components over the speech-active
        region at the reference mic."""
        b = self.context_boundary
        p_s = float(np.sum(np.square(self.clean_ref[b:], dtype=np.float64)))
        p_n = float(np.sum(np.square(self.noise_ref[b:], dtype=np.float64)))
        if p_s == 0.0:
            return -math.inf
        if p_n == 0.0:
            return math.inf
        return 10.0 * math.log10(p_s / p_n)


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float):
    """Noise gain g and mixture speech + g*noise at the requested SNR.

    Powers are measured over the speech span; the noise must cover it.
    """
    speech = np.asarray(speech, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] < speech.shape[-1]:
        raise ValueError("noise must be at least as long as speech")
    if not math.isfinite(snr_db):
        raise ValueError("mix_at_snr requires a finite snr_db")
    span = noise[..., :speech.shape[-1]]
    p_speech = float(np.mean(speech ** 2))
    p_noise = float(np.mean(span ** 2))
    if p_speech == 0.0 or p_noise == 0.0:
        raise ValueError("zero-power input")
    gain = math.sqrt(p_speech / p_noise) * 10.0 ** (-snr_db / 20.0)
    return gain, speech + gain * span


def _fractional_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay by a possibly fractional, possibly negative sample count.

    Integer delays are exact shifts; fractional parts go through a 32-tap
    Hann-windowed sinc interpolator. Output keeps the input length.
    """
    n = len(x)
    base = int(np.floor(delay_samples))
    frac = delay_samples - base
    if frac > 1.0 - 1e-9:
        base += 1
        frac = 0.0
    if frac < 1e-9:
        shifted = np.zeros(n)
        if base >= 0:
            if base < n:
                shifted[base:] = x[:n - base]
        elif -base < n:
            shifted[:base] = x[-base:]
        return shifted
    half = _SINC_TAPS // 2
    i = np.arange(-half, half)
    kernel = np.sinc(i - frac) * (0.5 * (1.0 + np.cos(np.pi * (i - frac) / half)))
    full = np.convolve(x, kernel)
    # full[j] = sum_i kernel_i x[j - 16 - i], so sample t of the delayed
    # signal sits at full[t + 16 - base]
    out = np.zeros(n)
    src_start = half - base
    lo = max(0, -src_start)
    hi = max(lo, min(n, len(full) - src_start))
    out[lo:hi] = full[src_start + lo:src_start + hi]
    return out


def simulate_array(source: np.ndarray, direction, geometry: ArrayGeometry,
                   sample_rate_hz: int = 16000) -> np.ndarray:
    """Far-field image of a source at the array: per-mic pure delay, unit
    gain. Mic m is delayed by -((r_m - r_0) . direction)/c relative to the
    reference, so channel 0 carries the source unchanged."""
    source = np.asarray(source, dtype=np.float64)
    direction = np.asarray(_unit(direction))
    pos = geometry.positions()
    rel = pos - pos[0]
    delays = -(rel @ direction) / geometry.speed_of_sound * sample_rate_hz
    out = np.empty((geometry.num_mics, len(source)))
    for m, d in enumerate(delays):
        out[m] = _fractional_delay(source, d)
    return out


def make_scene(speech: AudioBuffer, noise: AudioBuffer, config: SceneConfig,
               scene_id: str = "") -> Scene:
    """Assemble one scene: continuous noise from t=0, speech entering after
    the noise context, mixed at the configured SNR.

    The noise image is the sum of one array image per configured noise
    direction (same source signal, several arrival paths). Both images are
    rescaled by a common factor if needed to keep the mixture inside the
    WAV range, which leaves the SNR untouched.
    """
    if speech.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("speech and noise sample rates differ")
    fs = speech.sample_rate_hz
    geometry = config.geometry
    ctx = int(round(config.noise_context_s * fs))

    src = np.concatenate([np.zeros(_ONSET_GUARD), speech.channel(0)])
    total = ctx + len(src)
    if noise.num_samples < total:
        raise ValueError("insufficient noise duration for context plus query")

    speech_image = np.zeros((geometry.num_mics, total))
    if config.snr_db != -math.inf:
        img = simulate_array(src, config.speech_direction, geometry, fs)
        speech_image[:, ctx:] = img

    noise_src = noise.channel(0)[:total]
    noise_image = np.zeros((geometry.num_mics, total))
    if config.snr_db != math.inf:
        for d in config.noise_directions:
            noise_image += simulate_array(noise_src, d, geometry, fs)

    if config.snr_db == math.inf:
        gain = 0.0
    elif config.snr_db == -math.inf:
        gain = 1.0
    else:
        gain, _ = mix_at_snr(speech_image[0, ctx:], noise_image[0, ctx:],
                             config.snr_db)
    noise_image *= gain

    peak = float(np.max(np.abs(speech_image + noise_image), initial=0.0))
    if peak > _PEAK_TARGET:
        scale = _PEAK_TARGET / peak
        speech_image *= scale
        noise_image *= scale

    s32 = speech_image.astype(np.float32)
    n32 = noise_image.astype(np.float32)
    return Scene(mixture=s32 + n32, speech_image=s32, noise_image=n32,
                 context_boundary=ctx, sample_rate_hz=fs, config=config,
                 scene_id=scene_id)


def _random_direction(stream: SplitMix64) -> tuple:
    """Unit vector with uniform azimuth and mild elevation spread."""
    az = 2.0 * math.pi * stream.next_double()
    el = (stream.next_double() - 0.5) * (math.pi / 3.0)
    return (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))


def generate_sweep(speech_list, noise_list, snr_levels_db, geometry: ArrayGeometry,
                   seed: int, noise_context_s: float = 6.0,
                   num_noise_directions: int = 2) -> list:
    """One scene per (utterance, SNR), deterministically paired and steered.

    Each utterance keeps its noise pairing and directions across SNR levels
    so sweeps isolate the SNR (or mic count) effect."""
    if not speech_list or not noise_list or not snr_levels_db:
        raise ValueError("speech, noise, and SNR lists must be non-empty")
    scenes = []
    for u, speech in enumerate(speech_list):
        stream = SplitMix64(derive_seed(seed, u))
        noise = noise_list[stream.next_index(len(noise_list))]
        speech_dir = _random_direction(stream)
        noise_dirs = tuple(_random_direction(stream)
                           for _ in range(num_noise_directions))
        for s, snr in enumerate(snr_levels_db):
            cfg = SceneConfig(snr_db=float(snr), noise_context_s=noise_context_s,
                              speech_direction=speech_dir,
                              noise_directions=noise_dirs,
                              seed=derive_seed(seed, u, s), geometry=geometry)
            scenes.append(make_scene(speech, noise, cfg,
                                     scene_id=f"utt{u:03d}_snr{_snr_tag(snr)}"))
    return scenes


def _snr_tag(snr: float) -> str:
    if snr == math.inf:
        return "clean"
    if snr == -math.inf:
        return "noiseonly"
    return f"{'m' if snr < 0 else 'p'}{abs(snr):g}"


def save_scene(scene: Scene, out_dir, stem: str | None = None) -> dict:
    """Write the scene's WAVs and return its JSON-serializable manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or scene.scene_id or "scene"
    paths = {}
    for name, data in (("mixture", scene.mixture),
                       ("speech", scene.speech_image),
                       ("noise", scene.noise_image)):
        p = out_dir / f"{stem}_{name}.wav"
        write_wav(AudioBuffer(data, scene.sample_rate_hz), p, "float32")
        paths[name] = p.name
    cfg = scene.config
    entry = {
        "id": stem,
        "wavs": paths,
        "context_boundary": scene.context_boundary,
        "sample_rate_hz": scene.sample_rate_hz,
        "snr_db": _json_float(cfg.snr_db),
        "noise_context_s": cfg.noise_context_s,
        "speech_direction": list(cfg.speech_direction),
        "noise_directions": [list(d) for d in cfg.noise_directions],
        "seed": cfg.seed,
        "geometry": {
            "mic_positions": [list(p) for p in cfg.geometry.mic_positions],
            "speed_of_sound": cfg.geometry.speed_of_sound,
        },
    }
    with open(out_dir / f"{stem}.json", "w") as f:
        json.dump(entry, f, indent=2, sort_keys=True)
        f.write("\n")
    return entry


def load_scene(entry_or_path, base_dir=None) -> Scene:
    """Load a scene from its manifest entry (dict) or per-scene JSON path."""
    if isinstance(entry_or_path, (str, Path)):
        path = Path(entry_or_path)
        with open(path) as f:
            entry = json.load(f)
        base_dir = base_dir or path.parent
    else:
        entry = entry_or_path
        if base_dir is None:
            raise ValueError("base_dir is required with a manifest entry")
    base_dir = Path(base_dir)
    bufs = {name: read_wav(base_dir / fname)
            for name, fname in entry["wavs"].items()}
    geo = ArrayGeometry(tuple(tuple(p) for p in entry["geometry"]["mic_positions"]),
                        entry["geometry"]["speed_of_sound"])
    cfg = SceneConfig(snr_db=_parse_float(entry["snr_db"]),
                      noise_context_s=entry["noise_context_s"],
                      speech_direction=tuple(entry["speech_direction"]),
                      noise_directions=tuple(tuple(d) for d in entry["noise_directions"]),
                      seed=entry["seed"], geometry=geo)
    return Scene(mixture=bufs["mixture"].samples,
                 speech_image=bufs["speech"].samples,
                 noise_image=bufs["noise"].samples,
                 context_boundary=entry["context_boundary"],
                 sample_rate_hz=entry["sample_rate_hz"],
                 config=cfg, scene_id=entry["id"])


def save_manifest(entries: list, out_dir, seed: int | None = None) -> Path:
    manifest = {"format": "cleanstream-scenes-v1", "scenes": entries}
    if seed is not None:
        manifest["seed"] = seed
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(path) -> list:
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format") != "cleanstream-scenes-v1":
        raise ValueError("not a cleanstream scene manifest")
    return [load_scene(entry, base_dir=path.parent) for entry in manifest["scenes"]]


def _json_float(v: float):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return v


def _parse_float(v) -> float:
    return float(v)
