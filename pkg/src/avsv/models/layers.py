"""Encoder, pooling and head building blocks as functions over parameter dicts."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from avsv import autodiff as ad
from avsv.autodiff import Tensor
from avsv.errors import ConfigError, DimensionError
from avsv.models.config import EncoderConfig


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return 1 + (size - kernel) // stride


def _pad_amount(cfg: EncoderConfig, kernel: int) -> int:
    return (kernel - 1) // 2 if cfg.pad else 0


def spatial_trace(cfg: EncoderConfig, height: int, width: int) -> list:
    """Shapes ``(C, H, W)`` after each conv block; raises on a kernel that no longer fits."""
    channels = 1 if cfg.modality == "audio" else cfg.frame_shape[0]
    shapes = []
    for i, (co, k, s) in enumerate(cfg.conv_blocks):
        p = _pad_amount(cfg, k)
        h, w = height + 2 * p, width + 2 * p
        if k > h or k > w:
            raise ConfigError(
                f"{cfg.modality} conv block {i}: kernel {k}x{k} exceeds input {h}x{w}"
            )
        height, width, channels = _conv_out(h, k, s), _conv_out(w, k, s), co
        shapes.append((channels, height, width))
    return shapes


def min_audio_frames(cfg: EncoderConfig) -> int:
    """Shortest audio sequence that survives every valid conv along the time axis."""
    need = 1
    for _, k, s in reversed(cfg.conv_blocks):
        need = max((need - 1) * s + k - 2 * _pad_amount(cfg, k), 1)
    return need


def frame_feature_dim(cfg: EncoderConfig) -> int:
    """Width of each post-conv frame vector fed to the frame projection."""
    if cfg.modality == "audio":
        c, _, f = spatial_trace(cfg, min_audio_frames(cfg), cfg.frame_shape[0])[-1]
        return c * f
    c, h, w = spatial_trace(cfg, cfg.frame_shape[1], cfg.frame_shape[2])[-1]
    return c * h * w


def encoder_param_shapes(prefix: str, cfg: EncoderConfig) -> dict:
    shapes = {}
    cin = 1 if cfg.modality == "audio" else cfg.frame_shape[0]
    for i, (co, k, _) in enumerate(cfg.conv_blocks):
        shapes[f"{prefix}.conv{i}.kernel"] = (co, cin, k, k)
        cin = co
    fdim = frame_feature_dim(cfg)
    shapes[f"{prefix}.frame.weight"] = (fdim, cfg.encoding_dim)
    shapes[f"{prefix}.frame.bias"] = (cfg.encoding_dim,)
    if cfg.modality == "audio":
        shapes[f"{prefix}.attn.weight"] = (cfg.encoding_dim, cfg.attention_dim)
        shapes[f"{prefix}.attn.bias"] = (cfg.attention_dim,)
        shapes[f"{prefix}.attn.vector"] = (cfg.attention_dim, 1)
    return shapes


def _conv_stack(x: Tensor, params: dict, prefix: str, cfg: EncoderConfig) -> Tensor:
    for i, (_, k, s) in enumerate(cfg.conv_blocks):
        x = ad.pad2d(x, _pad_amount(cfg, k))
        x = ad.relu(ad.conv2d(x, params[f"{prefix}.conv{i}.kernel"], stride=s))
    return x


def attention_scores(frames: Tensor, W: Tensor, b: Tensor, v: Tensor) -> Tensor:
    """Unnormalised additive scores ``v . tanh(W h_t + b)`` for (N*T, D) frames."""
    return ad.linear(ad.tanh(ad.linear(frames, W, b)), v)


def attentive_pool_batch(seq: Tensor, W: Tensor, b: Tensor, v: Tensor) -> tuple:
    """Pool (N, T, D) -> (N, D); also returns the (N, T) attention weights."""
    n, t, d = seq.shape
    if t == 0:
        raise DimensionError("attentive pooling over an empty sequence")
    scores = attention_scores(ad.reshape(seq, (n * t, d)), W, b, v)
    alpha = ad.softmax(ad.reshape(scores, (n, t)))
    return ad.attend(alpha, seq), alpha


def attentive_pool(seq: Tensor, W: Tensor, b: Tensor, v: Tensor) -> Tensor:
    """Self-attentive pooling of one ``T x D`` sequence into a ``D`` vector."""
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DimensionError(f"attentive_pool needs a non-empty T x D sequence, got {seq.shape}")
    t, d = seq.shape
    pooled, _ = attentive_pool_batch(ad.reshape(seq, (1, t, d)), W, b, v)
    return ad.reshape(pooled, (d,))


def averaging_matrix(lengths: Sequence[int], dtype=np.float32) -> np.ndarray:
    """(N, sum T) matrix whose product with stacked frames gives per-segment means."""
    lengths = [int(n) for n in lengths]
    if min(lengths, default=1) < 1:
        raise DimensionError("temporal pooling over an empty sequence")
    m = np.zeros((len(lengths), sum(lengths)), dtype=dtype)
    start = 0
    for i, n in enumerate(lengths):
        m[i, start:start + n] = 1.0 / n
        start += n
    return m


def temporal_pool(seq: Tensor) -> Tensor:
    """Arithmetic mean over the frames of a ``T x D`` sequence."""
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DimensionError(f"temporal_pool needs a non-empty T x D sequence, got {seq.shape}")
    avg = Tensor(averaging_matrix([seq.shape[0]], seq.dtype), dtype=seq.dtype)
    return ad.reshape(ad.matmul(avg, seq), (seq.shape[1],))


def encode_audio(params: dict, prefix: str, cfg: EncoderConfig, audio: Tensor) -> Tensor:
    """(N, T, 64) logmel batch -> (N, encoding_dim) pooled encodings."""
    n, t, f = audio.shape
    x = _conv_stack(ad.reshape(audio, (n, 1, t, f)), params, prefix, cfg)
    _, c, tt, ff = x.shape
    frames = ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (n * tt, c * ff))
    enc = ad.linear(frames, params[f"{prefix}.frame.weight"], params[f"{prefix}.frame.bias"])
    seq = ad.reshape(enc, (n, tt, cfg.encoding_dim))
    pooled, _ = attentive_pool_batch(
        seq, params[f"{prefix}.attn.weight"], params[f"{prefix}.attn.bias"], params[f"{prefix}.attn.vector"]
    )
    return pooled


def encode_video(params: dict, prefix: str, cfg: EncoderConfig, frames: Tensor, lengths: Sequence[int]) -> Tensor:
    """Stacked (sum T, C, H, W) frames of N clips -> (N, encoding_dim) mean-pooled encodings."""
    total = frames.shape[0]
    x = _conv_stack(frames, params, prefix, cfg)
    flat = ad.reshape(x, (total, int(np.prod(x.shape[1:]))))
    enc = ad.linear(flat, params[f"{prefix}.frame.weight"], params[f"{prefix}.frame.bias"])
    avg = Tensor(averaging_matrix(lengths, enc.dtype), dtype=enc.dtype)
    return ad.matmul(avg, enc)


def head_features(params: dict, x: Tensor, use_bn: bool, running, dropout_p: float,
                  mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """FC -> ReLU -> [BN] -> dropout; the cosine class layer is applied by the loss."""
    h = ad.relu(ad.linear(x, params["head.fc1.weight"], params["head.fc1.bias"]))
    if use_bn:
        h = ad.batchnorm(h, params["head.bn.gamma"], params["head.bn.beta"], mode=mode, running=running)
    return ad.dropout(h, dropout_p, mode=mode, rng=rng)
