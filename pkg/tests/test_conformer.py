"""Causal conformer forward-pass tests: shapes, causality, streaming
equivalence, parameter counting, and the weight container."""

import numpy as np
import pytest

from cleanstream.conformer import (
    ConformerConfig,
    StreamState,
    count_params,
    forward,
    forward_streaming,
    init_weights,
    load_weights,
    save_weights,
)
from cleanstream.errors import (
    BadMagicError,
    ConfigError,
    ContainerMismatchError,
    TruncatedDataError,
)

SMALL = ConformerConfig(num_layers=2, model_dim=32, ff_dim=64, conv_kernel=5,
                        num_heads=4, attn_past_frames=7, input_dim=48,
                        output_dim=16)


@pytest.fixture(scope="module")
def small_weights():
    return init_weights(SMALL, seed=42)


def random_features(rng, frames, dim):
    return rng.standard_normal((frames, dim))


class TestConfig:
    def test_default_matches_model_card(self):
        cfg = ConformerConfig()
        assert (cfg.num_layers, cfg.model_dim, cfg.ff_dim) == (4, 256, 1024)
        assert (cfg.conv_kernel, cfg.num_heads, cfg.attn_past_frames) == (15, 8, 31)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            ConformerConfig(model_dim=30, num_heads=8)


class TestInitWeights:
    def test_deterministic_per_seed(self):
        a = init_weights(SMALL, seed=7)
        b = init_weights(SMALL, seed=7)
        for name in a.tensors:
            assert np.array_equal(a[name], b[name])

    def test_seeds_differ(self):
        a = init_weights(SMALL, seed=7)
        b = init_weights(SMALL, seed=8)
        assert any(not np.array_equal(a[name], b[name]) for name in a.tensors)

    def test_biases_zero_gains_one(self, small_weights):
        assert np.all(small_weights["in_proj.b"] == 0)
        assert np.all(small_weights["layer0.attn.qb"] == 0)
        assert np.all(small_weights["layer0.conv.gn_gain"] == 1)

    def test_fan_in_scaling(self, small_weights):
        w = small_weights["in_proj.w"]
        assert np.max(np.abs(w)) <= 1.0 / np.sqrt(SMALL.input_dim)


class TestForward:
    def test_shape_and_range(self, small_weights):
        rng = np.random.default_rng(0)
        mask = forward(random_features(rng, 12, SMALL.input_dim), small_weights)
        assert mask.values.shape == (12, SMALL.output_dim)
        assert np.all(mask.values > 0)
        assert np.all(mask.values < 1)

    def test_zero_weights_give_sigmoid_of_bias(self):
        w = init_weights(SMALL, seed=0)
        for name in w.tensors:
            w.tensors[name] = np.zeros_like(w.tensors[name])
        w.tensors["head.b"] = np.full_like(w.tensors["head.b"], 0.37)
        rng = np.random.default_rng(1)
        mask = forward(random_features(rng, 6, SMALL.input_dim), w)
        bias = np.float64(np.float32(0.37))  # container stores float32
        np.testing.assert_allclose(mask.values, 1 / (1 + np.exp(-bias)),
                                   rtol=1e-12)
        w.tensors["head.b"] = np.zeros_like(w.tensors["head.b"])
        mask = forward(random_features(rng, 4, SMALL.input_dim), w)
        np.testing.assert_array_equal(mask.values, 0.5)

    def test_causality_bit_exact(self, small_weights):
        rng = np.random.default_rng(2)
        x = random_features(rng, 20, SMALL.input_dim)
        base = forward(x, small_weights).values
        for t in (5, 12, 19):
            perturbed = x.copy()
            perturbed[t:] += rng.standard_normal(perturbed[t:].shape)
            out = forward(perturbed, small_weights).values
            assert np.array_equal(out[:t], base[:t])
            assert not np.array_equal(out[t:], base[t:])

    def test_nonfinite_input_rejected(self, small_weights):
        x = np.zeros((3, SMALL.input_dim))
        x[1, 4] = np.nan
        with pytest.raises(ValueError, match="finite"):
            forward(x, small_weights)

    def test_determinism(self, small_weights):
        rng = np.random.default_rng(3)
        x = random_features(rng, 8, SMALL.input_dim)
        a = forward(x, small_weights).values
        b = forward(x, small_weights).values
        assert np.array_equal(a, b)


class TestStreaming:
    def test_matches_batch(self, small_weights):
        rng = np.random.default_rng(4)
        x = random_features(rng, 50, SMALL.input_dim)
        batch = forward(x, small_weights).values
        state = StreamState(SMALL)
        rows = [forward_streaming(state, frame, small_weights) for frame in x]
        np.testing.assert_allclose(np.vstack(rows), batch, atol=1e-5)

    def test_first_frame_context_is_itself(self, small_weights):
        rng = np.random.default_rng(5)
        frame = rng.standard_normal(SMALL.input_dim)
        state = StreamState(SMALL)
        out_stream = forward_streaming(state, frame, small_weights)
        out_batch = forward(frame[None, :], small_weights).values[0]
        np.testing.assert_allclose(out_stream, out_batch, atol=1e-10)

    def test_reset_isolates_utterances(self, small_weights):
        rng = np.random.default_rng(6)
        first = random_features(rng, 9, SMALL.input_dim)
        second = random_features(rng, 9, SMALL.input_dim)
        state = StreamState(SMALL)
        for frame in first:
            forward_streaming(state, frame, small_weights)
        state.reset()
        rows_after = [forward_streaming(state, f, small_weights) for f in second]
        fresh = StreamState(SMALL)
        rows_fresh = [forward_streaming(fresh, f, small_weights) for f in second]
        np.testing.assert_array_equal(np.vstack(rows_after), np.vstack(rows_fresh))


class TestCountParams:
    def test_default_config_near_paper_size(self):
        n = count_params(ConformerConfig())
        assert 5_500_000 <= n <= 7_500_000

    def test_zero_layers_is_projection_plus_head(self):
        cfg = ConformerConfig(num_layers=0)
        expected = (cfg.input_dim * cfg.model_dim + cfg.model_dim
                    + cfg.model_dim * cfg.output_dim + cfg.output_dim)
        assert count_params(cfg) == expected

    def test_ff_dim_delta_closed_form(self):
        base = ConformerConfig()
        doubled = ConformerConfig(ff_dim=2 * base.ff_dim)
        # per half-FF block: w1 grows by D*F, b1 by F, w2 by F*D
        per_half_ff = 2 * base.model_dim * base.ff_dim + base.ff_dim
        expected_delta = base.num_layers * 2 * per_half_ff
        assert count_params(doubled) - count_params(base) == expected_delta

    def test_matches_initialized_tensor_sizes(self, small_weights):
        total = sum(t.size for t in small_weights.tensors.values())
        assert count_params(SMALL) == total


class TestContainer:
    def test_round_trip_bit_identical(self, tmp_path, small_weights):
        path = tmp_path / "w.cfw"
        save_weights(small_weights, path)
        back = load_weights(path)
        assert back.config == SMALL
        for name in small_weights.tensors:
            assert np.array_equal(back[name], small_weights[name])

    def test_truncated_container(self, tmp_path, small_weights):
        path = tmp_path / "w.cfw"
        save_weights(small_weights, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(TruncatedDataError, match="truncated"):
            load_weights(path)

    def test_bad_magic(self, tmp_path, small_weights):
        path = tmp_path / "w.cfw"
        save_weights(small_weights, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_weights(path)

    def test_config_mismatch(self, tmp_path, small_weights):
        path = tmp_path / "w.cfw"
        save_weights(small_weights, path)
        other = ConformerConfig(num_layers=2, model_dim=64, ff_dim=64,
                                conv_kernel=5, num_heads=4, attn_past_frames=7,
                                input_dim=48, output_dim=16)
        with pytest.raises(ContainerMismatchError, match="config mismatch"):
            load_weights(path, expected_config=other)
