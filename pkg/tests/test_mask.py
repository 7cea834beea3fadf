"""IRM, mask application, and spectral loss tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cleanstream.features import MelConfig, MelSpectrogram
from cleanstream.mask import (
    Mask,
    MaskPostConfig,
    apply_mask,
    ideal_ratio_mask,
    loss_gradient,
    mask_multiplier,
    spectral_loss,
)

CFG = MelConfig()


def lin(values):
    return MelSpectrogram(np.asarray(values, dtype=float), False, CFG)


nonneg_grids = arrays(np.float64, (4, 6),
                      elements=st.floats(0.0, 1e3, allow_nan=False))


class TestIdealRatioMask:
    def test_direct_formula(self):
        m = ideal_ratio_mask(lin([[3.0]]), lin([[1.0]]))
        assert m.values[0, 0] == 0.75

    def test_boundaries(self):
        m = ideal_ratio_mask(lin([[0.0, 2.0, 0.0]]), lin([[5.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(m.values, [[0.0, 1.0, 0.0]])

    @given(x=nonneg_grids, n=nonneg_grids)
    @settings(max_examples=50, deadline=None)
    def test_algebraic_identity(self, x, n):
        m = ideal_ratio_mask(lin(x), lin(n))
        np.testing.assert_allclose(m.values * (x + n), x, atol=1e-12)

    @given(x=nonneg_grids, n=nonneg_grids)
    @settings(max_examples=50, deadline=None)
    def test_range(self, x, n):
        m = ideal_ratio_mask(lin(x), lin(n))
        assert np.all(m.values >= 0.0)
        assert np.all(m.values <= 1.0)

    def test_monotone_in_speech(self):
        n = np.full((1, 5), 2.0)
        xs = np.linspace(0, 10, 5)[None, :]
        m = ideal_ratio_mask(lin(xs), lin(n))
        assert np.all(np.diff(m.values[0]) >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            ideal_ratio_mask(lin(np.zeros((2, 3))), lin(np.zeros((3, 2))))

    def test_rejects_log_input(self):
        log = MelSpectrogram(np.zeros((1, 1)), True, CFG)
        with pytest.raises(ValueError, match="linear"):
            ideal_ratio_mask(log, lin([[1.0]]))


class TestApplyMask:
    def test_paper_constants_spot_values(self):
        cfg = MaskPostConfig()
        assert cfg.alpha == 0.5
        assert cfg.beta == 0.01
        assert mask_multiplier(0.25, cfg) == 0.5
        assert mask_multiplier(0.0, cfg) == 0.1
        assert mask_multiplier(1.0, cfg) == 1.0

    def test_pointwise_application(self):
        out = apply_mask(lin([[2.0]]), Mask(np.array([[0.25]])))
        assert out.values[0, 0] == 1.0

    def test_identity_at_full_mask(self):
        y = lin([[0.3, 7.0, 0.0]])
        out = apply_mask(y, Mask(np.ones((1, 3))))
        np.testing.assert_array_equal(out.values, y.values)

    def test_multiplier_bounds(self):
        cfg = MaskPostConfig()
        rng = np.random.default_rng(4)
        y = rng.uniform(0, 10, size=(6, 8))
        m = Mask(rng.uniform(0, 1, size=(6, 8)))
        out = apply_mask(lin(y), m, cfg)
        assert np.all(out.values <= y + 1e-15)
        assert np.all(out.values >= (cfg.beta ** cfg.alpha) * y - 1e-15)

    def test_oracle_reconstruction_alpha_one(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 5, size=(10, 16))
        n = rng.uniform(0, 5, size=(10, 16))
        m = ideal_ratio_mask(lin(x), lin(n))
        out = apply_mask(lin(x + n), m, MaskPostConfig(alpha=1.0, beta=0.0))
        np.testing.assert_allclose(out.values, x, rtol=1e-9, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            apply_mask(lin(np.zeros((2, 2))), Mask(np.zeros((2, 3))))


class TestSpectralLoss:
    def test_zero_at_equality(self):
        m = Mask(np.random.default_rng(0).uniform(0, 1, (3, 4)))
        assert spectral_loss(m, m) == 0.0

    def test_single_element(self):
        assert spectral_loss(Mask(np.array([[1.0]])), Mask(np.array([[0.0]]))) == 2.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(10)
        a = rng.uniform(0, 1, (5, 7))
        b = rng.uniform(0, 1, (5, 7))
        total = 0.0
        for i in range(5):
            for j in range(7):
                d = a[i, j] - b[i, j]
                total += abs(d) + d * d
        assert abs(spectral_loss(Mask(a), Mask(b)) - total) <= 1e-12

    def test_symmetry_and_positivity(self):
        rng = np.random.default_rng(11)
        a = Mask(rng.uniform(0, 1, (3, 3)))
        b = Mask(rng.uniform(0, 1, (3, 3)))
        assert spectral_loss(a, b) > 0
        assert spectral_loss(a, b) == spectral_loss(b, a)


class TestLossGradient:
    def test_spot_value(self):
        g = loss_gradient(Mask(np.array([[1.0]])), Mask(np.array([[0.0]])))
        assert g[0, 0] == -3.0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        m = Mask(rng.uniform(0.0, 0.4, (4, 5)))
        est = Mask(rng.uniform(0.6, 1.0, (4, 5)))
        grad = loss_gradient(m, est)
        h = 1e-6
        for i in range(4):
            for j in range(5):
                up = est.values.copy()
                dn = est.values.copy()
                up[i, j] += h
                dn[i, j] -= h
                fd = (spectral_loss(m, Mask(up)) - spectral_loss(m, Mask(dn))) / (2 * h)
                assert abs(grad[i, j] - fd) <= 1e-4

    def test_antisymmetry(self):
        rng = np.random.default_rng(13)
        a = Mask(rng.uniform(0.0, 0.45, (3, 4)))
        b = Mask(rng.uniform(0.55, 1.0, (3, 4)))
        np.testing.assert_allclose(loss_gradient(a, b), -loss_gradient(b, a),
                                   rtol=1e-12)
