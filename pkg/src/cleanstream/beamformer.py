"""Oracle eigen-steered beamformer baseline.

True speech and noise statistics specify the weights directly: the
steering vector per bin is the principal eigenvector of the speech
covariance, and the weights minimize output noise power subject to unit
response along that vector (MVDR). One complex coefficient per microphone
per bin, computed independently for every bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram

_HERMITIAN_TOL = 1e-10
_DEFAULT_LOADING_SCALE = 1e-6


@dataclass
class SpatialCovariance:
    """Per-bin Hermitian M x M matrices, shape (num_bins, M, M)."""

    matrices: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.matrices, dtype=np.complex128)
        if phi.ndim != 3 or phi.shape[1] != phi.shape[2]:
            raise ValueError("matrices must be (num_bins, M, M)")
        herm_err = np.max(np.abs(phi - np.conj(np.swapaxes(phi, 1, 2))))
        scale = max(float(np.max(np.abs(phi))), 1.0)
        if herm_err > _HERMITIAN_TOL * scale:
            raise ValueError("covariance matrices are not Hermitian")
        self.matrices = phi

    @property
    def num_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_mics(self) -> int:
        return self.matrices.shape[1]


@dataclass
class BeamformerWeights:
    """Per-bin weight vectors and the steering vectors they answer to."""

    weights: np.ndarray   # (num_bins, M)
    steering: np.ndarray  # (num_bins, M)

    @property
    def num_bins(self) -> int:
        return self.weights.shape[0]

    @property
    def num_mics(self) -> int:
        return self.weights.shape[1]

    def distortionless_error(self) -> np.ndarray:
        """|w^H d - 1| per bin."""
        resp = np.einsum("km,km->k", np.conj(self.weights), self.steering)
        return np.abs(resp - 1.0)


def covariance(spec: Spectrogram, frame_range: slice | None = None) -> SpatialCovariance:
    """Sample covariance (1/T) sum_n y(k,n) y(k,n)^H per bin."""
    frame_range = frame_range or slice(None)
    y = spec.data[:, frame_range, :]  # (M, T, K)
    n_frames = y.shape[1]
    if n_frames < 1:
        raise ValueError("empty frame range")
    phi = np.einsum("atk,btk->kab", y, np.conj(y)) / n_frames
    # exact Hermitian by construction up to rounding; symmetrize
    phi = 0.5 * (phi + np.conj(np.swapaxes(phi, 1, 2)))
    return SpatialCovariance(phi)


def principal_steering(speech_cov: SpatialCovariance) -> np.ndarray:
    """Principal eigenvector of the speech covariance per bin.

    Eigenvector phase is fixed by rotating the largest-magnitude component
    to the positive real axis; the distortionless constraint makes the
    beamformer output invariant to this choice anyway.
    """
    _, vecs = np.linalg.eigh(speech_cov.matrices)
    d = vecs[:, :, -1]  # eigh sorts ascending
    anchor_idx = np.argmax(np.abs(d), axis=1)
    anchor = d[np.arange(d.shape[0]), anchor_idx]
    phase = anchor / np.where(np.abs(anchor) > 0, np.abs(anchor), 1.0)
    return d / np.where(np.abs(anchor) > 0, phase, 1.0)[:, None]


def steer(speech_cov: SpatialCovariance, noise_cov: SpatialCovariance,
          diagonal_loading: float | None = None) -> BeamformerWeights:
    """MVDR weights toward the principal eigenvector of the speech statistics.

    w(k) = Phi_N(k)^-1 d(k) / (d(k)^H Phi_N(k)^-1 d(k)) with diagonal
    loading added to Phi_N for invertibility. When `diagonal_loading` is
    None it defaults to 1e-6 * trace(Phi_N)/M per bin.
    """
    if speech_cov.matrices.shape != noise_cov.matrices.shape:
        raise ValueError("speech and noise covariance dims differ")
    m = noise_cov.num_mics
    phi_n = noise_cov.matrices
    if diagonal_loading is None:
        tr = np.real(np.trace(phi_n, axis1=1, axis2=2)) / m
        # absolute floor keeps zero noise statistics solvable (clean scenes)
        loading = _DEFAULT_LOADING_SCALE * np.maximum(tr, 1e-12)
    else:
        loading = np.full(phi_n.shape[0], float(diagonal_loading))
    loaded = phi_n + loading[:, None, None] * np.eye(m)

    d = principal_steering(speech_cov)
    try:
        x = np.linalg.solve(loaded, d[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as err:
        raise ValueError(f"loaded noise covariance is singular: {err}") from err
    denom = np.real(np.einsum("km,km->k", np.conj(d), x))
    if np.any(denom <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("noise covariance is not positive definite")
    w = x / denom[:, None]
    return BeamformerWeights(w, d)


def apply_beamformer(weights: BeamformerWeights, spec: Spectrogram) -> Spectrogram:
    """Single-channel output w(k)^H y(k, n)."""
    if spec.num_channels != weights.num_mics or spec.num_bins != weights.num_bins:
        raise ValueError("spectrogram dims do not match beamformer weights")
    out = np.einsum("km,mtk->tk", np.conj(weights.weights), spec.data)
    return Spectrogram(out[np.newaxis], spec.config)


def output_noise_power(weights: np.ndarray, noise_cov: SpatialCovariance) -> np.ndarray:
    """w^H Phi_N w per bin, for optimality checks."""
    return np.real(np.einsum("km,kmn,kn->k", np.conj(weights),
                             noise_cov.matrices, weights))
