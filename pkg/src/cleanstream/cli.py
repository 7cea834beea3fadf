"""Command-line interface.

Subcommands:
  simulate  build scenes from WAV inputs and write a manifest
  enhance   run one method over one scene
  evaluate  run methods over a manifest, write per-method CSVs + summary
  sweep     cleaner SNR improvement versus microphone count

Exit codes: 0 success, 1 scene-level failure, 2 configuration error.
Worker count is capped by the CLEANSTREAM_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .audio_io import AudioBuffer, read_wav, write_wav
from .container import write_tensor
from .errors import CleanstreamError, ConfigError, FormatError
from .pipeline import (
    EnhancementMethod,
    PipelineParams,
    SceneMetrics,
    evaluate_manifest,
    mic_sweep,
    run_method,
    write_rows_csv,
)
from .simulator import (
    default_geometry,
    generate_sweep,
    load_manifest,
    load_scene,
    save_manifest,
    save_scene,
)

EXIT_OK = 0
EXIT_SCENE_FAILURE = 1
EXIT_CONFIG = 2


def _parse_snr(v) -> float:
    if isinstance(v, str) and v in ("inf", "clean"):
        return math.inf
    if isinstance(v, str) and v == "-inf":
        return -math.inf
    return float(v)


def _cmd_simulate(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    try:
        speech = [read_wav(p) for p in cfg["speech_wavs"]]
        noise = [read_wav(p) for p in cfg["noise_wavs"]]
        snrs = [_parse_snr(v) for v in cfg["snr_levels_db"]]
        geometry = default_geometry(int(cfg.get("num_mics", 3)))
        scenes = generate_sweep(
            speech, noise, snrs, geometry,
            seed=int(cfg.get("seed", 0)),
            noise_context_s=float(cfg.get("noise_context_s", 6.0)),
            num_noise_directions=int(cfg.get("num_noise_directions", 2)))
    except KeyError as err:
        raise ConfigError(f"simulate config missing key {err}") from err
    out = Path(args.out)
    entries = [save_scene(scene, out) for scene in scenes]
    manifest = save_manifest(entries, out, seed=int(cfg.get("seed", 0)))
    print(f"wrote {len(entries)} scenes to {manifest}")
    return EXIT_OK


def _cmd_enhance(args) -> int:
    scene = load_scene(args.scene)
    params = PipelineParams(num_mics=args.mics, weights_path=args.weights)
    result = run_method(scene, args.method, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scene.scene_id or 'scene'}_{args.method}"
    write_tensor(out / f"{stem}_mel.csf", result.mel.values,
                 params.mel.hash_u64())
    if result.waveform is not None:
        peak = float(abs(result.waveform).max(initial=0.0))
        wav = result.waveform if peak <= 1.0 else result.waveform / peak
        write_wav(AudioBuffer(wav, scene.sample_rate_hz),
                  out / f"{stem}.wav", "float32")
    write_rows_csv([result.row], out / f"{stem}_metrics.csv")
    print(f"{result.row.scene_id} {args.method}: "
          f"improvement {result.row.snr_improvement_db:+.2f} dB")
    return EXIT_OK if result.row.status == "ok" else EXIT_SCENE_FAILURE


def _cmd_evaluate(args) -> int:
    scenes = load_manifest(args.manifest)
    methods = [EnhancementMethod(m.strip()) for m in args.methods.split(",")]
    params = PipelineParams(num_mics=args.mics, weights_path=args.weights)
    rows, failures = evaluate_manifest(scenes, methods, args.out, params)
    print(f"{len(rows)} rows, {failures} failures -> {args.out}")
    return EXIT_SCENE_FAILURE if failures else EXIT_OK


def _cmd_sweep(args) -> int:
    scenes = load_manifest(args.manifest)
    mic_counts = [int(m) for m in args.mics.split(",")]
    limit = min(s.num_mics for s in scenes)
    if max(mic_counts) > limit:
        raise ConfigError(f"scenes only carry {limit} channels")
    _rows, summary, failures = mic_sweep(scenes, mic_counts, args.out)
    for item in summary:
        print(f"mics={item['num_mics']} snr={item['snr_db']:+g} dB: "
              f"mean improvement {item['mean_improvement_db']:+.2f} dB "
              f"over {item['count']} scenes")
    return EXIT_SCENE_FAILURE if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cleanstream",
        description="Streaming multichannel speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate scenes from a JSON config")
    p.add_argument("--config", required=True, help="JSON simulation config")
    p.add_argument("--out", required=True, help="output scene directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("enhance", help="run one method over one scene")
    p.add_argument("--scene", required=True, help="per-scene JSON file")
    p.add_argument("--method", required=True,
                   choices=[m.value for m in EnhancementMethod])
    p.add_argument("--weights", default=None, help="conformer weight container")
    p.add_argument("--mics", type=int, default=None,
                   help="use only the first N channels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("evaluate", help="run methods over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True,
                   help="comma-separated method names")
    p.add_argument("--weights", default=None)
    p.add_argument("--mics", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="cleaner improvement vs mic count")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mics", required=True, help="comma-separated mic counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError,
            ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, CleanstreamError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCENE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
