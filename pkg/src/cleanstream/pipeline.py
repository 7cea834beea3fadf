"""End-to-end enhancement pipelines and sweep evaluation.

Each method consumes a Scene and produces enhanced features, an enhanced
waveform where one exists, and one metrics row. Waveform methods
(passthrough, cleaner, beamformer) report time-domain SNR from the scene's
exact component decomposition passed separately through the same linear
stage; mask methods report SNR in the mel feature domain. The model path
always consumes exactly one raw channel plus one cleaner channel, whatever
the array size.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from statistics import mean, stdev

import numpy as np

from . import cleaner as _cleaner
from . import conformer as _conformer
from .beamformer import apply_beamformer, covariance, steer
from .features import MelConfig, MelSpectrogram, stack, to_log, to_mel, mel_filterbank
from .mask import Mask, MaskPostConfig, apply_mask, ideal_ratio_mask
from .metrics import log_spectral_distance_db, mask_mse, si_sdr, snr_db
from .simulator import Scene
from .stft import StftConfig, Spectrogram, analyze, synthesize

THREADS_ENV = "CLEANSTREAM_THREADS"


class EnhancementMethod(str, Enum):
    PASSTHROUGH = "passthrough"
    CLEANER = "cleaner"
    BEAMFORMER_ORACLE = "beamformer_oracle"
    CLEANFORMER_ORACLE_MASK = "cleanformer_oracle_mask"
    CLEANFORMER_MODEL = "cleanformer_model"


@dataclass
class PipelineParams:
    stft: StftConfig = field(default_factory=StftConfig)
    mel: MelConfig | None = None
    mask_post: MaskPostConfig = field(default_factory=MaskPostConfig)
    taps_per_mic: int = 3
    forgetting_factor: float = 0.9995
    init_diag: float = 0.01
    num_mics: int | None = None       # channel prefix; None = all channels
    weights_path: str | None = None   # cleanformer_model only

    def __post_init__(self):
        if self.mel is None:
            self.mel = MelConfig(stft=self.stft)


@dataclass
class SceneMetrics:
    """One row of a metrics report. SNRs are time-domain for waveform
    methods and mel-domain for mask methods."""

    scene_id: str
    method: str
    num_mics: int
    input_snr_db: float = math.nan
    output_snr_db: float = math.nan
    snr_improvement_db: float = math.nan
    si_sdr_db: float = math.nan
    lsd_db: float = math.nan
    mask_mse: float | None = None
    status: str = "ok"

    CSV_FIELDS = ("scene_id", "method", "num_mics", "input_snr_db",
                  "output_snr_db", "snr_improvement_db", "si_sdr_db",
                  "lsd_db", "mask_mse", "status")

    def csv_row(self) -> list:
        def fmt(v):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                return ""
            if isinstance(v, float):
                return f"{v:.6f}" if math.isfinite(v) else str(v)
            return str(v)
        return [fmt(getattr(self, name)) for name in self.CSV_FIELDS]


@dataclass
class EnhancementResult:
    mel: MelSpectrogram
    waveform: np.ndarray | None
    row: SceneMetrics


def _cleaner_config(scene: Scene, params: PipelineParams) -> _cleaner.CleanerConfig:
    return _cleaner.CleanerConfig(
        num_mics=scene.num_mics, taps_per_mic=params.taps_per_mic,
        forgetting_factor=params.forgetting_factor, init_diag=params.init_diag)


def _scene_spectra(scene: Scene, params: PipelineParams):
    if scene.sample_rate_hz != params.stft.sample_rate_hz:
        raise ValueError("scene sample rate does not match the STFT config")
    spec_mix = analyze(scene.mixture, params.stft)
    spec_s = analyze(scene.speech_image, params.stft)
    spec_n = analyze(scene.noise_image, params.stft)
    return spec_mix, spec_s, spec_n


def _query_frame_start(scene: Scene, stft: StftConfig) -> int:
    """First frame not fully inside the noise context."""
    boundary = scene.context_boundary
    if boundary < stft.window_len:
        return 0
    return (boundary - stft.window_len) // stft.hop_len + 1


def _trimmed(x: np.ndarray, stft: StftConfig) -> np.ndarray:
    """Drop one window from each end to stay on the exactly-reconstructed
    interior of an overlap-add resynthesis."""
    return x[stft.window_len:len(x) - stft.window_len]


def _waveform_metrics(row: SceneMetrics, scene: Scene, params: PipelineParams,
                      out_speech: np.ndarray, out_noise: np.ndarray,
                      offset: int) -> None:
    """Fill SNR/SI-SDR for a waveform method whose enhanced components
    start at sample `offset` of the scene timeline."""
    stft = params.stft
    b = scene.context_boundary
    in_s = scene.clean_ref[b:].astype(np.float64)
    in_n = scene.noise_ref[b:].astype(np.float64)
    row.input_snr_db = snr_db(_trimmed(in_s, stft), _trimmed(in_n, stft))
    row.output_snr_db = snr_db(_trimmed(out_speech, stft), _trimmed(out_noise, stft))
    row.snr_improvement_db = row.output_snr_db - row.input_snr_db
    ref = scene.clean_ref[offset:offset + len(out_speech)].astype(np.float64)
    est = out_speech + out_noise
    row.si_sdr_db = si_sdr(_trimmed(est, stft), _trimmed(ref, stft))


def _mel_of(spec: Spectrogram, params: PipelineParams, fbank: np.ndarray,
            frames: slice = slice(None)) -> MelSpectrogram:
    return to_mel(spec.frames(frames.start or 0, frames.stop), params.mel,
                  filterbank=fbank)


def run_method(scene: Scene, method: EnhancementMethod | str,
               params: PipelineParams | None = None) -> EnhancementResult:
    """Run one enhancement method over one scene and score it."""
    params = params or PipelineParams()
    method = EnhancementMethod(method)
    if params.num_mics is not None:
        scene = scene.channel_prefix(params.num_mics)
    stft = params.stft
    fbank = mel_filterbank(params.mel)
    row = SceneMetrics(scene_id=scene.scene_id or "scene", method=method.value,
                       num_mics=scene.num_mics)
    spec_mix, spec_s, spec_n = _scene_spectra(scene, params)
    n_query = _query_frame_start(scene, stft)
    boundary = scene.context_boundary

    if method is EnhancementMethod.PASSTHROUGH:
        out = scene.mixture[0].astype(np.float64)[boundary:]
        _waveform_metrics(row, scene, params,
                          scene.clean_ref[boundary:].astype(np.float64),
                          scene.noise_ref[boundary:].astype(np.float64),
                          boundary)
        row.output_snr_db = row.input_snr_db
        row.snr_improvement_db = 0.0
        mel = _mel_of(spec_mix, params, fbank, slice(n_query, None))
        row.lsd_db = log_spectral_distance_db(
            mel.values, _mel_of(spec_s, params, fbank, slice(n_query, None)).values,
            params.mel.log_floor)
        return EnhancementResult(mel, out, row)

    if method in (EnhancementMethod.CLEANER, EnhancementMethod.BEAMFORMER_ORACLE):
        if method is EnhancementMethod.CLEANER:
            state = _cleaner.adapt_on_spectrogram(
                spec_mix, _cleaner_config(scene, params), n_query)
            z_s = _cleaner.apply_frozen(state, spec_s, n_query)
            z_n = _cleaner.apply_frozen(state, spec_n, n_query)
            z_mix = _cleaner.apply_frozen(state, spec_mix, n_query)
        else:
            phi_s = covariance(spec_s, slice(n_query, None))
            phi_n = covariance(spec_n, slice(0, None))
            weights = steer(phi_s, phi_n)
            z_s = apply_beamformer(weights, spec_s.frames(n_query))
            z_n = apply_beamformer(weights, spec_n.frames(n_query))
            z_mix = apply_beamformer(weights, spec_mix.frames(n_query))
        out_speech = synthesize(z_s)
        out_noise = synthesize(z_n)
        offset = n_query * stft.hop_len
        _waveform_metrics(row, scene, params, out_speech, out_noise, offset)
        mel = to_mel(z_mix, params.mel, filterbank=fbank)
        row.lsd_db = log_spectral_distance_db(
            mel.values, _mel_of(spec_s, params, fbank, slice(n_query, None)).values,
            params.mel.log_floor)
        return EnhancementResult(mel, synthesize(z_mix), row)

    # mask-domain methods share the cleaner front end and oracle features
    state = _cleaner.adapt_on_spectrogram(
        spec_mix, _cleaner_config(scene, params), n_query)
    z_mix = _cleaner.apply_frozen(state, spec_mix, n_query)
    mel_raw = _mel_of(spec_mix, params, fbank, slice(n_query, None))
    mel_x = _mel_of(spec_s, params, fbank, slice(n_query, None))
    mel_n = _mel_of(spec_n, params, fbank, slice(n_query, None))
    oracle = ideal_ratio_mask(mel_x, mel_n)

    if method is EnhancementMethod.CLEANFORMER_ORACLE_MASK:
        enhanced = apply_mask(mel_raw, oracle, params.mask_post)
        row.mask_mse = mask_mse(oracle.values, oracle.values)
        est_mask = oracle
        sel = slice(None)
    else:
        if params.weights_path is None:
            raise ValueError("cleanformer_model requires a weights file")
        weights = _conformer.load_weights(params.weights_path)
        mel_clean_stream = to_mel(z_mix, params.mel, filterbank=fbank)
        feats = stack(to_log(mel_raw), to_log(mel_clean_stream))
        est = _conformer.forward(feats, weights)
        sel = feats.anchor_frames
        est_mask = Mask(est.values)
        enhanced = apply_mask(
            MelSpectrogram(mel_raw.values[sel], False, params.mel),
            est_mask, params.mask_post)
        row.mask_mse = mask_mse(est.values, oracle.values[sel])

    x = mel_x.values[sel]
    n = mel_n.values[sel]
    err = enhanced.values - x
    row.input_snr_db = _power_ratio_db(x, n)
    row.output_snr_db = _power_ratio_db(x, err)
    row.snr_improvement_db = row.output_snr_db - row.input_snr_db
    row.lsd_db = log_spectral_distance_db(enhanced.values, x, params.mel.log_floor)
    return EnhancementResult(enhanced, None, row)


def _power_ratio_db(sig: np.ndarray, err: np.ndarray) -> float:
    p_s = float(np.sum(sig * sig))
    p_e = float(np.sum(err * err))
    if p_e == 0.0:
        return math.inf
    if p_s == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_s / p_e)


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def evaluate_scenes(scenes: list, methods: list, params: PipelineParams | None = None):
    """Run every method over every scene in a worker pool.

    Per-scene failures become rows with a non-ok status; the run continues.
    Rows come back sorted by (method, scene_id) so output is deterministic
    regardless of scheduling."""
    params = params or PipelineParams()
    jobs = [(m, s) for m in methods for s in scenes]

    def one(job):
        method, scene = job
        try:
            return run_method(scene, method, params).row
        except Exception as err:  # noqa: BLE001 - failures become report rows
            mics = params.num_mics or scene.num_mics
            return SceneMetrics(scene_id=scene.scene_id or "scene",
                                method=EnhancementMethod(method).value,
                                num_mics=mics, status=f"error: {err}")

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        rows = list(pool.map(one, jobs))
    rows.sort(key=lambda r: (r.method, r.scene_id, r.num_mics))
    return rows


def write_rows_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SceneMetrics.CSV_FIELDS)
        for row in rows:
            writer.writerow(row.csv_row())


def summarize(rows: list, scene_snrs: dict) -> list:
    """Aggregate improvement stats per (method, num_mics, labeled SNR)."""
    groups = {}
    for row in rows:
        if row.status != "ok":
            continue
        key = (row.method, row.num_mics, scene_snrs.get(row.scene_id, math.nan))
        groups.setdefault(key, []).append(row.snr_improvement_db)
    out = []
    for (method, mics, snr), vals in sorted(groups.items(),
                                            key=lambda kv: (kv[0][0], kv[0][1],
                                                            kv[0][2])):
        finite = [v for v in vals if math.isfinite(v)]
        out.append({
            "method": method,
            "num_mics": mics,
            "snr_db": snr,
            "count": len(vals),
            "mean_improvement_db": mean(finite) if finite else math.nan,
            "std_improvement_db": stdev(finite) if len(finite) > 1 else 0.0,
        })
    return out


def write_summary_csv(summary: list, path) -> None:
    fields = ("method", "num_mics", "snr_db", "count",
              "mean_improvement_db", "std_improvement_db")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for item in summary:
            writer.writerow([
                item["method"], item["num_mics"],
                _fmt6(item["snr_db"]), item["count"],
                _fmt6(item["mean_improvement_db"]),
                _fmt6(item["std_improvement_db"])])


def _fmt6(v: float) -> str:
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return f"{float(v):.6f}"


def evaluate_manifest(scenes: list, methods: list, out_dir,
                      params: PipelineParams | None = None) -> tuple:
    """Evaluate and write one CSV per method plus a combined summary.

    Returns (rows, number of failed rows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = evaluate_scenes(scenes, methods, params)
    for method in methods:
        name = EnhancementMethod(method).value
        write_rows_csv([r for r in rows if r.method == name],
                       out_dir / f"metrics_{name}.csv")
    snrs = {s.scene_id: s.config.snr_db for s in scenes}
    write_summary_csv(summarize(rows, snrs), out_dir / "summary.csv")
    failures = sum(1 for r in rows if r.status != "ok")
    return rows, failures


def mic_sweep(scenes: list, mic_counts: list, out_dir,
              params: PipelineParams | None = None,
              method: EnhancementMethod = EnhancementMethod.CLEANER) -> tuple:
    """Cleaner improvement versus array size over a fixed scene set."""
    base = params or PipelineParams()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for mics in mic_counts:
        p = PipelineParams(stft=base.stft, mel=base.mel, mask_post=base.mask_post,
                           taps_per_mic=base.taps_per_mic,
                           forgetting_factor=base.forgetting_factor,
                           init_diag=base.init_diag, num_mics=mics,
                           weights_path=base.weights_path)
        all_rows.extend(evaluate_scenes(scenes, [method], p))
    all_rows.sort(key=lambda r: (r.method, r.num_mics, r.scene_id))
    write_rows_csv(all_rows, out_dir / "mic_sweep_rows.csv")
    snrs = {s.scene_id: s.config.snr_db for s in scenes}
    summary = summarize(all_rows, snrs)
    write_summary_csv(summary, out_dir / "mic_sweep_summary.csv")
    failures = sum(1 for r in all_rows if r.status != "ok")
    return all_rows, summary, failures
