"""Eigen-steered MVDR beamformer tests."""

import numpy as np
import pytest

from cleanstream.beamformer import (
    BeamformerWeights,
    SpatialCovariance,
    apply_beamformer,
    covariance,
    output_noise_power,
    principal_steering,
    steer,
)
from cleanstream.stft import Spectrogram, StftConfig


def small_cfg(num_bins):
    fft = 2 * (num_bins - 1)
    return StftConfig(fft_size=fft, window_len=fft, hop_len=fft // 2)


def spec_from(data):
    return Spectrogram(np.asarray(data, dtype=complex),
                       small_cfg(np.asarray(data).shape[2]))


def random_psd(rng, m, boost=0.0):
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return a @ a.conj().T + boost * np.eye(m)


class TestCovariance:
    def test_single_frame_rank_one(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((3, 1, 5)) + 1j * rng.standard_normal((3, 1, 5))
        phi = covariance(spec_from(y))
        for k in range(5):
            v = y[:, 0, k]
            np.testing.assert_allclose(phi.matrices[k], np.outer(v, v.conj()),
                                       rtol=1e-12)

    def test_identical_channels_all_ones_structure(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((1, 50, 3)) + 1j * rng.standard_normal((1, 50, 3))
        y = np.repeat(base, 4, axis=0)
        phi = covariance(spec_from(y))
        for k in range(3):
            p = phi.matrices[k]
            np.testing.assert_allclose(p, p[0, 0] * np.ones((4, 4)), rtol=1e-12)

    def test_white_noise_approaches_scaled_identity(self):
        rng = np.random.default_rng(2)
        t = 5000
        y = (rng.standard_normal((3, t, 4)) + 1j * rng.standard_normal((3, t, 4)))
        phi = covariance(spec_from(y))
        for k in range(4):
            np.testing.assert_allclose(phi.matrices[k], 2.0 * np.eye(3),
                                       atol=0.05 * 2 * 3)

    def test_empty_range_errors(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((2, 10, 3)) + 0j
        with pytest.raises(ValueError, match="empty"):
            covariance(spec_from(y), slice(4, 4))

    def test_non_hermitian_rejected(self):
        bad = np.zeros((2, 2, 2), dtype=complex)
        bad[0, 0, 1] = 1.0
        with pytest.raises(ValueError, match="Hermitian"):
            SpatialCovariance(bad)


class TestSteer:
    def test_matched_filter_under_white_noise(self):
        # rank-1 speech, identity noise: w = d / ||d||^2 analytically
        rng = np.random.default_rng(4)
        m = 4
        d = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        phi_s = np.outer(d, d.conj())[None]
        phi_n = np.eye(m, dtype=complex)[None] * 2.0
        w = steer(SpatialCovariance(phi_s), SpatialCovariance(phi_n),
                  diagonal_loading=0.0)
        d_hat = w.steering[0]
        expected = d_hat / np.linalg.norm(d_hat) ** 2
        np.testing.assert_allclose(w.weights[0], expected, rtol=1e-10)

    def test_single_mic_passthrough(self):
        phi_s = np.full((3, 1, 1), 4.0 + 0j)
        phi_n = np.full((3, 1, 1), 2.5 + 0j)
        w = steer(SpatialCovariance(phi_s), SpatialCovariance(phi_n))
        out_resp = np.conj(w.weights[:, 0]) * w.steering[:, 0]
        np.testing.assert_allclose(out_resp, 1.0, atol=1e-12)

    def test_distortionless_constraint(self):
        rng = np.random.default_rng(5)
        phi_s = np.stack([random_psd(rng, 3) for _ in range(16)])
        phi_n = np.stack([random_psd(rng, 3, boost=0.5) for _ in range(16)])
        w = steer(SpatialCovariance(phi_s), SpatialCovariance(phi_n))
        assert np.max(w.distortionless_error()) < 1e-10

    def test_invariant_to_speech_covariance_scale(self):
        rng = np.random.default_rng(6)
        phi_s = np.stack([random_psd(rng, 3) for _ in range(8)])
        phi_n = np.stack([random_psd(rng, 3, boost=0.5) for _ in range(8)])
        w1 = steer(SpatialCovariance(phi_s), SpatialCovariance(phi_n))
        w2 = steer(SpatialCovariance(7.3 * phi_s), SpatialCovariance(phi_n))
        np.testing.assert_allclose(w1.weights, w2.weights, atol=1e-10)

    def test_mvdr_beats_constrained_grid_search(self):
        # independent optimality check: brute-force the distortionless
        # manifold for M=2 from a matched-filter anchor point
        rng = np.random.default_rng(7)
        for _ in range(10):
            phi_n = random_psd(rng, 2, boost=0.3)
            phi_s = random_psd(rng, 2)
            sc = SpatialCovariance(phi_s[None])
            nc = SpatialCovariance(phi_n[None])
            w = steer(sc, nc, diagonal_loading=0.0)
            p_mvdr = output_noise_power(w.weights, nc)[0]

            d = w.steering[0]
            anchor = d / np.linalg.norm(d) ** 2  # distortionless, not optimal
            null = np.array([-d[1].conj(), d[0].conj()])
            null /= np.linalg.norm(null)

            def power(z):
                cand = anchor + z * null
                return np.real(cand.conj() @ phi_n @ cand)

            grid = np.linspace(-4, 4, 101)
            best_z, best_p = 0j, power(0j)
            for re in grid:
                for im in grid:
                    p = power(re + 1j * im)
                    if p < best_p:
                        best_p, best_z = p, re + 1j * im
            step = grid[1] - grid[0]
            fine = np.linspace(-step, step, 81)
            for re in fine:
                for im in fine:
                    p = power(best_z + re + 1j * im)
                    best_p = min(best_p, p)
            assert p_mvdr <= best_p * (1 + 1e-9)
            assert best_p - p_mvdr <= 1e-3 * p_mvdr


class TestApply:
    def test_mic_selector_weights(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal((3, 20, 4)) + 1j * rng.standard_normal((3, 20, 4))
        w = np.zeros((4, 3), dtype=complex)
        w[:, 0] = 1.0
        bw = BeamformerWeights(w, w)
        out = apply_beamformer(bw, spec_from(y))
        np.testing.assert_allclose(out.data[0], y[0].reshape(20, 4))

    def test_zero_input_zero_output(self):
        bw = BeamformerWeights(np.ones((4, 3), dtype=complex),
                               np.ones((4, 3), dtype=complex))
        out = apply_beamformer(bw, spec_from(np.zeros((3, 5, 4), dtype=complex)))
        assert np.all(out.data == 0)

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_array_gain_matches_theory(self, m):
        # plane wave along d in unit white noise: SNR gain = 10 log10(M)
        rng = np.random.default_rng(100 + m)
        t, bins = 5000, 3
        phases = np.exp(2j * np.pi * rng.uniform(size=(bins, m)))
        s = rng.standard_normal((1, t, bins)) + 1j * rng.standard_normal((1, t, bins))
        speech = np.empty((m, t, bins), dtype=complex)
        for k in range(bins):
            speech[:, :, k] = np.outer(phases[k], s[0, :, k])
        noise = (rng.standard_normal((m, t, bins))
                 + 1j * rng.standard_normal((m, t, bins))) / np.sqrt(2)

        phi_s = covariance(spec_from(speech))
        phi_n = covariance(spec_from(noise))
        w = steer(phi_s, phi_n)
        out_s = apply_beamformer(w, spec_from(speech)).data
        out_n = apply_beamformer(w, spec_from(noise)).data
        in_snr = np.sum(np.abs(speech[0]) ** 2) / np.sum(np.abs(noise[0]) ** 2)
        out_snr = np.sum(np.abs(out_s) ** 2) / np.sum(np.abs(out_n) ** 2)
        gain_db = 10 * np.log10(out_snr / in_snr)
        assert abs(gain_db - 10 * np.log10(m)) < 1.0

    def test_dims_mismatch_errors(self):
        bw = BeamformerWeights(np.ones((4, 3), dtype=complex),
                               np.ones((4, 3), dtype=complex))
        with pytest.raises(ValueError, match="match"):
            apply_beamformer(bw, spec_from(np.zeros((2, 5, 4), dtype=complex)))


class TestSteeringVector:
    def test_principal_eigenvector_phase_fix(self):
        rng = np.random.default_rng(9)
        phi = np.stack([random_psd(rng, 3) for _ in range(6)])
        d = principal_steering(SpatialCovariance(phi))
        for k in range(6):
            anchor = d[k, np.argmax(np.abs(d[k]))]
            assert abs(anchor.imag) < 1e-12
            assert anchor.real > 0

    def test_bin_permutation_equivariance(self):
        rng = np.random.default_rng(10)
        phi_s = np.stack([random_psd(rng, 3) for _ in range(8)])
        phi_n = np.stack([random_psd(rng, 3, boost=0.4) for _ in range(8)])
        perm = rng.permutation(8)
        w1 = steer(SpatialCovariance(phi_s), SpatialCovariance(phi_n))
        w2 = steer(SpatialCovariance(phi_s[perm]), SpatialCovariance(phi_n[perm]))
        np.testing.assert_allclose(w1.weights[perm], w2.weights, atol=1e-12)
