"""Waveform- and feature-domain quality metrics.

WER needs a recognizer, so quality is reported through verifiable proxies:
component-tracked SNR (scenes decompose exactly), scale-invariant SDR,
log-spectral distance on mel features, and mask MSE against the oracle.
Infinite results (zero error) are reported as inf sentinels, not clipped.
"""

from __future__ import annotations

import math

import numpy as np


def snr_db(signal_component: np.ndarray, noise_component: np.ndarray) -> float:
    """10 log10 of the component power ratio; inf when the noise is silent."""
    s = np.asarray(signal_component, dtype=np.float64)
    n = np.asarray(noise_component, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError("components must have equal lengths")
    p_s = float(np.sum(s * s))
    p_n = float(np.sum(n * n))
    if p_n == 0.0:
        return math.inf
    if p_s == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_s / p_n)


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant SDR: project the estimate onto the reference and
    compare target power to residual power. Any rescaled copy of the
    reference scores inf."""
    e = np.asarray(estimate, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError("estimate and reference must have equal lengths")
    r_energy = float(np.dot(r, r))
    if r_energy == 0.0:
        raise ValueError("reference is all zero")
    alpha = float(np.dot(e, r)) / r_energy
    target = alpha * r
    err = e - target
    p_t = float(np.dot(target, target))
    p_e = float(np.dot(err, err))
    if p_e == 0.0:
        return math.inf
    if p_t == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_t / p_e)


def log_spectral_distance_db(a: np.ndarray, b: np.ndarray,
                             floor: float = 1e-5) -> float:
    """Mean over frames of the RMS log-spectral difference in dB between
    two linear-magnitude mel (or spectral) arrays of shape (frames, bins)."""
    a = np.maximum(np.asarray(a, dtype=np.float64), floor)
    b = np.maximum(np.asarray(b, dtype=np.float64), floor)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    d = 20.0 * np.log10(a / b)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def mask_mse(estimate: np.ndarray, target: np.ndarray) -> float:
    est = np.asarray(estimate, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if est.shape != tgt.shape:
        raise ValueError("shape mismatch")
    return float(np.mean((est - tgt) ** 2))
