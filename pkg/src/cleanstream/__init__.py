"""Streaming multichannel speech enhancement toolkit.

Signal path: a per-frequency RLS noise canceller adapted on the noise
context and frozen for the query, 128-bin log-mel features stacked from
the raw and cleaned streams, a causal conformer (or the oracle IRM) that
produces a mel-domain mask, and an eigen-steered MVDR beamformer baseline.
A delay-and-gain scene simulator and an SNR-sweep evaluation CLI tie the
pieces together.
"""

from .audio_io import AudioBuffer, read_wav, write_wav
from .beamformer import (
    BeamformerWeights,
    SpatialCovariance,
    apply_beamformer,
    covariance,
    steer,
)
from .cleaner import (
    CleanerConfig,
    CleanerState,
    adapt_frame,
    adapt_on_spectrogram,
    apply_frozen,
    batch_ls_oracle,
    clean_utterance,
    cleaner_init,
    context_frame_count,
    freeze,
    residual,
)
from .conformer import (
    ConformerConfig,
    ConformerWeights,
    StreamState,
    count_params,
    forward,
    forward_streaming,
    init_weights,
    load_weights,
    save_weights,
)
from .features import (
    MelConfig,
    MelSpectrogram,
    StackedFeatures,
    mel_filterbank,
    stack,
    to_log,
    to_mel,
)
from .mask import (
    Mask,
    MaskPostConfig,
    apply_mask,
    ideal_ratio_mask,
    loss_gradient,
    mask_multiplier,
    spectral_loss,
)
from .metrics import log_spectral_distance_db, mask_mse, si_sdr, snr_db
from .pipeline import (
    EnhancementMethod,
    PipelineParams,
    SceneMetrics,
    evaluate_manifest,
    mic_sweep,
    run_method,
)
from .simulator import (
    ArrayGeometry,
    Scene,
    SceneConfig,
    default_geometry,
    generate_sweep,
    make_scene,
    mix_at_snr,
    simulate_array,
)
from .stft import Spectrogram, StftConfig, analyze, synthesize

__version__ = "0.1.0"
