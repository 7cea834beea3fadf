"""Forward-only causal conformer mask estimator.

Layer order is half-step feed-forward, convolution, masked self-attention,
half-step feed-forward (convolution ahead of attention, so no relative
positional encoding is needed), with layer normalization before every block
and after the final half-step module, and residual connections around each
block. The convolution module is pointwise conv, gated linear unit, causal
depthwise conv, and single-group group normalization. Attention sees the
current frame plus a bounded window of past frames only, which is what
makes frame-synchronous streaming possible.

Inference only: weights come from `init_weights` (seeded, for property
tests) or from a weight container. There is no training path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    ContainerMismatchError,
    MalformedHeaderError,
    TruncatedDataError,
)
from .features import StackedFeatures
from .mask import Mask

_WEIGHTS_MAGIC = b"CFW1"
_WEIGHTS_VERSION = 1
_LN_EPS = 1e-6


@dataclass(frozen=True)
class ConformerConfig:
    num_layers: int = 4
    model_dim: int = 256
    ff_dim: int = 1024
    conv_kernel: int = 15
    num_heads: int = 8
    attn_past_frames: int = 31
    input_dim: int = 1024
    output_dim: int = 128

    def __post_init__(self):
        if min(self.model_dim, self.ff_dim, self.conv_kernel, self.num_heads,
               self.input_dim, self.output_dim) < 1 or self.num_layers < 0:
            raise ConfigError("conformer dimensions must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError("model_dim must be divisible by num_heads")
        if self.attn_past_frames < 0:
            raise ConfigError("attn_past_frames must be >= 0")

    def as_tuple(self) -> tuple:
        return (self.num_layers, self.model_dim, self.ff_dim, self.conv_kernel,
                self.num_heads, self.attn_past_frames, self.input_dim,
                self.output_dim)


def _tensor_catalogue(config: ConformerConfig):
    """(name, shape, init kind) for every parameter, in container order."""
    d, f, k = config.model_dim, config.ff_dim, config.conv_kernel
    out = [("in_proj.w", (config.input_dim, d), "weight"),
           ("in_proj.b", (d,), "bias")]

    def ln(prefix):
        return [(f"{prefix}.gain", (d,), "gain"), (f"{prefix}.bias", (d,), "bias")]

    def ffn(prefix):
        return ln(f"{prefix}.ln") + [
            (f"{prefix}.w1", (d, f), "weight"), (f"{prefix}.b1", (f,), "bias"),
            (f"{prefix}.w2", (f, d), "weight"), (f"{prefix}.b2", (d,), "bias")]

    for i in range(config.num_layers):
        p = f"layer{i}"
        out += ffn(f"{p}.ffn1")
        out += ln(f"{p}.conv.ln") + [
            (f"{p}.conv.pw_w", (d, 2 * d), "weight"),
            (f"{p}.conv.pw_b", (2 * d,), "bias"),
            (f"{p}.conv.dw_w", (k, d), "weight"),
            (f"{p}.conv.dw_b", (d,), "bias"),
            (f"{p}.conv.gn_gain", (d,), "gain"),
            (f"{p}.conv.gn_bias", (d,), "bias")]
        out += ln(f"{p}.attn.ln")
        for name in ("wq", "wk", "wv", "wo"):
            out += [(f"{p}.attn.{name}", (d, d), "weight"),
                    (f"{p}.attn.{name[1]}b", (d,), "bias")]
        out += ffn(f"{p}.ffn2")
        out += ln(f"{p}.out_ln")

    out += [("head.w", (d, config.output_dim), "weight"),
            ("head.b", (config.output_dim,), "bias")]
    return out


@dataclass
class ConformerWeights:
    """All parameter tensors, keyed by catalogue name; float32 storage."""

    config: ConformerConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_weights(config: ConformerConfig, seed: int) -> ConformerWeights:
    """Seed-deterministic initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    for matrices (fan_in = rows; kernel size for the depthwise conv), zeros
    for biases, ones for norm gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in _tensor_catalogue(config):
        if kind == "weight":
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif kind == "bias":
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = np.ones(shape, dtype=np.float32)
    return ConformerWeights(config, tensors)


def count_params(config: ConformerConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in _tensor_catalogue(config))


def _layer_norm(x, gain, bias):
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gain + bias


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _swish(x):
    return x * _sigmoid(x)


def _ffn(x, w, prefix):
    xn = _layer_norm(x, w[f"{prefix}.ln.gain"], w[f"{prefix}.ln.bias"])
    h = _swish(xn @ w[f"{prefix}.w1"] + w[f"{prefix}.b1"])
    return h @ w[f"{prefix}.w2"] + w[f"{prefix}.b2"]


def _glu(h):
    half = h.shape[-1] // 2
    return h[..., :half] * _sigmoid(h[..., half:])


def _conv_block(x, w, prefix, kernel):
    """Pointwise conv, GLU, causal depthwise conv (kernel-1 left padding),
    single-group group norm."""
    xn = _layer_norm(x, w[f"{prefix}.ln.gain"], w[f"{prefix}.ln.bias"])
    g = _glu(xn @ w[f"{prefix}.pw_w"] + w[f"{prefix}.pw_b"])
    padded = np.concatenate([np.zeros((kernel - 1, g.shape[1])), g], axis=0)
    dw = w[f"{prefix}.dw_w"]
    t = g.shape[0]
    conv = np.zeros_like(g)
    for j in range(kernel):
        conv += dw[j] * padded[j:j + t]
    conv += w[f"{prefix}.dw_b"]
    return _layer_norm(conv, w[f"{prefix}.gn_gain"], w[f"{prefix}.gn_bias"])


def _attend(query, history, w, prefix, num_heads):
    """Attention output for one frame given its visible history (which
    includes the frame itself as the last row)."""
    dim = query.shape[-1]
    head_dim = dim // num_heads
    q = (query @ w[f"{prefix}.wq"] + w[f"{prefix}.qb"]).reshape(num_heads, head_dim)
    k = (history @ w[f"{prefix}.wk"] + w[f"{prefix}.kb"]).reshape(-1, num_heads, head_dim)
    v = (history @ w[f"{prefix}.wv"] + w[f"{prefix}.vb"]).reshape(-1, num_heads, head_dim)
    scores = np.einsum("hd,shd->hs", q, k) / np.sqrt(head_dim)
    scores -= np.max(scores, axis=1, keepdims=True)
    alpha = np.exp(scores)
    alpha /= np.sum(alpha, axis=1, keepdims=True)
    ctx = np.einsum("hs,shd->hd", alpha, v).reshape(dim)
    return ctx @ w[f"{prefix}.wo"] + w[f"{prefix}.ob"]


def _attention_block(x, w, prefix, config):
    xn = _layer_norm(x, w[f"{prefix}.ln.gain"], w[f"{prefix}.ln.bias"])
    out = np.empty_like(xn)
    for t in range(xn.shape[0]):
        lo = max(0, t - config.attn_past_frames)
        out[t] = _attend(xn[t], xn[lo:t + 1], w, prefix, config.num_heads)
    return out


def forward(features, weights: ConformerWeights) -> Mask:
    """Batch forward pass: one mask frame per stacked input frame.

    Strictly causal: output frame t depends only on input frames <= t.
    """
    config = weights.config
    x = features.values if isinstance(features, StackedFeatures) else np.asarray(features)
    x = x.astype(np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"features must be (frames, {config.input_dim})")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    w = weights
    x = x @ w["in_proj.w"] + w["in_proj.b"]
    for i in range(config.num_layers):
        p = f"layer{i}"
        x = x + 0.5 * _ffn(x, w, f"{p}.ffn1")
        x = x + _conv_block(x, w, f"{p}.conv", config.conv_kernel)
        x = x + _attention_block(x, w, f"{p}.attn", config)
        x = x + 0.5 * _ffn(x, w, f"{p}.ffn2")
        x = _layer_norm(x, w[f"{p}.out_ln.gain"], w[f"{p}.out_ln.bias"])
    logits = x @ w["head.w"] + w["head.b"]
    return Mask(_sigmoid(logits))


class StreamState:
    """Per-layer ring buffers for frame-synchronous inference.

    Each layer keeps the last attn_past_frames post-norm frames (attention
    context) and the last conv_kernel - 1 GLU outputs (depthwise conv
    context). Single-writer per stream."""

    def __init__(self, config: ConformerConfig):
        self.config = config
        self.reset()

    def reset(self) -> None:
        d = self.config.model_dim
        self.conv_ctx = [np.zeros((self.config.conv_kernel - 1, d))
                         for _ in range(self.config.num_layers)]
        self.attn_ctx = [np.zeros((0, d)) for _ in range(self.config.num_layers)]


def forward_streaming(state: StreamState, frame, weights: ConformerWeights) -> np.ndarray:
    """Process one stacked frame; matches the corresponding row of the
    batch forward pass on the sequence seen so far."""
    config = weights.config
    if state.config != config:
        raise ValueError("stream state was built for a different config")
    x = np.asarray(frame, dtype=np.float64).reshape(config.input_dim)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    w = weights
    x = x @ w["in_proj.w"] + w["in_proj.b"]
    for i in range(config.num_layers):
        p = f"layer{i}"
        x = x + 0.5 * _ffn(x, w, f"{p}.ffn1")

        xn = _layer_norm(x, w[f"{p}.conv.ln.gain"], w[f"{p}.conv.ln.bias"])
        g = _glu(xn @ w[f"{p}.conv.pw_w"] + w[f"{p}.conv.pw_b"])
        window = np.concatenate([state.conv_ctx[i], g[np.newaxis]], axis=0)
        conv = np.sum(w[f"{p}.conv.dw_w"] * window, axis=0) + w[f"{p}.conv.dw_b"]
        x = x + _layer_norm(conv, w[f"{p}.conv.gn_gain"], w[f"{p}.conv.gn_bias"])
        state.conv_ctx[i] = window[1:]

        an = _layer_norm(x, w[f"{p}.attn.ln.gain"], w[f"{p}.attn.ln.bias"])
        history = np.concatenate([state.attn_ctx[i], an[np.newaxis]], axis=0)
        x = x + _attend(an, history, w, f"{p}.attn", config.num_heads)
        if config.attn_past_frames > 0:
            state.attn_ctx[i] = history[-config.attn_past_frames:]

        x = x + 0.5 * _ffn(x, w, f"{p}.ffn2")
        x = _layer_norm(x, w[f"{p}.out_ln.gain"], w[f"{p}.out_ln.bias"])
    return _sigmoid(x @ w["head.w"] + w["head.b"])


def save_weights(weights: ConformerWeights, path) -> None:
    """Versioned container: magic, config, then float32 tensors in
    catalogue order."""
    header = struct.pack("<4sI8I", _WEIGHTS_MAGIC, _WEIGHTS_VERSION,
                         *weights.config.as_tuple())
    with open(path, "wb") as f:
        f.write(header)
        for name, shape, _ in _tensor_catalogue(weights.config):
            tensor = weights.tensors[name]
            if tuple(tensor.shape) != shape:
                raise ValueError(f"tensor {name} has unexpected shape")
            f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_weights(path, expected_config: ConformerConfig | None = None) -> ConformerWeights:
    with open(path, "rb") as f:
        raw = f.read()
    head_len = struct.calcsize("<4sI8I")
    if len(raw) < head_len:
        raise TruncatedDataError("truncated container: header incomplete")
    magic, version, *cfg_fields = struct.unpack_from("<4sI8I", raw, 0)
    if magic != _WEIGHTS_MAGIC:
        raise BadMagicError("not a conformer weight container")
    if version != _WEIGHTS_VERSION:
        raise MalformedHeaderError(f"unknown container version {version}")
    config = ConformerConfig(*cfg_fields)
    if expected_config is not None and config != expected_config:
        raise ContainerMismatchError("config mismatch between file and caller")
    need = head_len + 4 * count_params(config)
    if len(raw) < need:
        raise TruncatedDataError("truncated container: payload incomplete")
    if len(raw) > need:
        raise MalformedHeaderError("trailing bytes after declared payload")
    tensors = {}
    pos = head_len
    for name, shape, _ in _tensor_catalogue(config):
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n,
                                      offset=pos).reshape(shape).copy()
        pos += 4 * n
    return ConformerWeights(config, tensors)
