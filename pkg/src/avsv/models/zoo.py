"""The four network topologies: construction, training forward pass and embedding."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from avsv import autodiff as ad
from avsv.autodiff import RunningStats, Tensor
from avsv.data.sample import AVSample
from avsv.errors import CapabilityError, ConfigError
from avsv.models import layers
from avsv.models.config import (
    MEL_BINS,
    MID_FUSION,
    MULTI_VIEW,
    UNIMODAL_A,
    UNIMODAL_V,
    EncoderConfig,
    Topology,
)
from avsv.models.losses import arc_margin_loss, cosine_logits, multitask_loss

HEAD_PARAMS = ("head.fc1.weight", "head.fc1.bias", "head.bn.gamma", "head.bn.beta", "head.classes")


class Model:
    """Parameters plus the topology that says how to wire them."""

    def __init__(self, topology: Topology, audio_cfg: EncoderConfig, video_cfg: EncoderConfig,
                 params: dict, running: Optional[RunningStats]):
        self.topology = topology
        self.audio_cfg = audio_cfg
        self.video_cfg = video_cfg
        self.params = params
        self.running = running
        self.mode = "train"

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "infer"
        return self

    @property
    def kind(self) -> str:
        return self.topology.kind

    def parameters(self) -> list:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def head_parameters(self) -> list:
        return [self.params[n] for n in HEAD_PARAMS if n in self.params]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        """Name -> array for every parameter and batch-norm buffer."""
        state = {name: p.data for name, p in self.params.items()}
        if self.running is not None:
            state["head.bn.running_mean"] = self.running.mean
            state["head.bn.running_var"] = self.running.var
        return state

    def load_state_dict(self, state: dict) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in self.params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        if self.running is not None:
            self.running.mean = np.array(state["head.bn.running_mean"], dtype=self.running.mean.dtype)
            self.running.var = np.array(state["head.bn.running_var"], dtype=self.running.var.dtype)

    def astype(self, dtype) -> "Model":
        params = {n: Tensor(p.data.astype(dtype), requires_grad=True, name=n, dtype=dtype)
                  for n, p in self.params.items()}
        running = None
        if self.running is not None:
            running = RunningStats(self.running.mean.size, dtype)
            running.mean = self.running.mean.astype(dtype)
            running.var = self.running.var.astype(dtype)
        m = Model(self.topology, self.audio_cfg, self.video_cfg, params, running)
        m.mode = self.mode
        return m


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def param_shapes(topology: Topology, audio_cfg: EncoderConfig, video_cfg: EncoderConfig) -> dict:
    """Ordered name -> shape map for a topology; validates dimension consistency."""
    if audio_cfg.modality != "audio":
        raise ConfigError(f"audio encoder config has modality {audio_cfg.modality!r}")
    if video_cfg.modality != "video":
        raise ConfigError(f"video encoder config has modality {video_cfg.modality!r}")
    shapes = {}
    if topology.uses_audio:
        shapes.update(layers.encoder_param_shapes("audio", audio_cfg))
    if topology.uses_video:
        shapes.update(layers.encoder_param_shapes("video", video_cfg))

    kind = topology.kind
    if kind == UNIMODAL_A:
        head_in = audio_cfg.encoding_dim
    elif kind == UNIMODAL_V:
        head_in = video_cfg.encoding_dim
    elif kind == MID_FUSION:
        head_in = audio_cfg.encoding_dim + video_cfg.encoding_dim
    else:
        head_in = topology.proj_dim
        shapes["audio.proj.weight"] = (audio_cfg.encoding_dim, topology.proj_dim)
        shapes["audio.proj.bias"] = (topology.proj_dim,)
        shapes["video.proj.weight"] = (video_cfg.encoding_dim, topology.proj_dim)
        shapes["video.proj.bias"] = (topology.proj_dim,)
        if shapes["audio.proj.weight"][1] != shapes["video.proj.weight"][1]:
            raise ConfigError(
                f"shared space mismatch: audio projection {shapes['audio.proj.weight'][1]} "
                f"vs video projection {shapes['video.proj.weight'][1]}"
            )

    hidden = topology.head.hidden_dim
    shapes["head.fc1.weight"] = (head_in, hidden)
    shapes["head.fc1.bias"] = (hidden,)
    if topology.batchnorm:
        shapes["head.bn.gamma"] = (hidden,)
        shapes["head.bn.beta"] = (hidden,)
    shapes["head.classes"] = (topology.head.num_classes, hidden)
    return shapes


def _init(name: str, shape: tuple, seed: int) -> np.ndarray:
    if name.endswith(".bias") or name.endswith(".beta"):
        return np.zeros(shape, dtype=np.float32)
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=np.float32)
    if name == "head.classes":
        fan_in = shape[1]
    else:
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
    bound = np.sqrt(6.0 / fan_in)
    return _stream(seed, name).uniform(-bound, bound, size=shape).astype(np.float32)


def build_model(topology: Topology, audio_cfg: EncoderConfig, video_cfg: EncoderConfig, seed: int = 0) -> Model:
    """Instantiate a topology with fan-in-scaled uniform weights drawn per parameter name."""
    shapes = param_shapes(topology, audio_cfg, video_cfg)
    params = {name: Tensor(_init(name, shape, seed), requires_grad=True, name=name)
              for name, shape in shapes.items()}
    running = RunningStats(topology.head.hidden_dim) if topology.batchnorm else None
    return Model(topology, audio_cfg, video_cfg, params, running)


# ----------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    audio: Optional[np.ndarray]
    video: Optional[np.ndarray]
    video_lengths: list
    size: int


def cycle_crop(frames: np.ndarray, length: int, offset: int = 0) -> np.ndarray:
    """Take ``length`` frames starting at ``offset``, wrapping around short sequences."""
    idx = (offset + np.arange(length)) % frames.shape[0]
    return frames[idx]


def collate(samples: Sequence[AVSample], t_crop: Optional[int] = None,
            offsets: Optional[Sequence[int]] = None, audio: bool = True, video: bool = True) -> Batch:
    samples = list(samples)
    a = v = None
    lengths = []
    if audio:
        if any(s.audio is None for s in samples):
            raise CapabilityError("batch needs audio but a sample has none")
        t = t_crop or max(s.audio.shape[0] for s in samples)
        offs = offsets if offsets is not None else [0] * len(samples)
        a = np.stack([cycle_crop(s.audio, t, o) for s, o in zip(samples, offs)])
    if video:
        if any(s.video is None for s in samples):
            raise CapabilityError("batch needs video but a sample has none")
        v = np.concatenate([s.video for s in samples])
        lengths = [s.video.shape[0] for s in samples]
    return Batch(a, v, lengths, len(samples))


# ----------------------------------------------------------------------------
# forward passes


@dataclass
class ForwardResult:
    features: Tensor
    logits: Tensor
    head_params: tuple


def _audio_encoding(model: Model, audio: np.ndarray, dtype) -> Tensor:
    need = layers.min_audio_frames(model.audio_cfg)
    if audio.shape[1] < need:
        audio = np.stack([cycle_crop(x, need) for x in audio])
    return layers.encode_audio(model.params, "audio", model.audio_cfg, Tensor(audio, dtype=dtype))


def _video_encoding(model: Model, frames: np.ndarray, lengths, dtype) -> Tensor:
    return layers.encode_video(model.params, "video", model.video_cfg, Tensor(frames, dtype=dtype), lengths)


def _project(model: Model, branch: str, enc: Tensor) -> Tensor:
    return ad.linear(enc, model.params[f"{branch}.proj.weight"], model.params[f"{branch}.proj.bias"])


def _branch_inputs(model: Model, batch: Batch) -> dict:
    """Head inputs keyed by output name ('A', 'V' or 'AV')."""
    dtype = model.params["head.fc1.weight"].dtype
    kind = model.kind
    if kind == UNIMODAL_A:
        return {"A": _audio_encoding(model, batch.audio, dtype)}
    if kind == UNIMODAL_V:
        return {"V": _video_encoding(model, batch.video, batch.video_lengths, dtype)}
    a = _audio_encoding(model, batch.audio, dtype)
    v = _video_encoding(model, batch.video, batch.video_lengths, dtype)
    if kind == MID_FUSION:
        return {"AV": ad.concat([a, v])}
    return {"A": _project(model, "audio", a), "V": _project(model, "video", v)}


def forward_train(model: Model, batch, labels=None, rng: Optional[np.random.Generator] = None,
                  mode: Optional[str] = None) -> dict:
    """Run encoders and head; returns ``{output name: ForwardResult}``.

    ``batch`` is a :class:`Batch` or a list of samples (collated without
    cropping). MultiView yields two outputs that pass through the very same
    head tensors.
    """
    mode = mode or model.mode
    if not isinstance(batch, Batch):
        batch = collate(batch, audio=model.topology.uses_audio, video=model.topology.uses_video)
    k = model.topology.head.num_classes
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    use_bn = model.topology.batchnorm
    p = model.topology.head.dropout_p
    head = tuple(model.head_parameters())
    out = {}
    for key, x in _branch_inputs(model, batch).items():
        feats = layers.head_features(model.params, x, use_bn, model.running, p, mode, rng)
        logits = ad.scale(cosine_logits(feats, model.params["head.classes"]), model.topology.arc.scale)
        out[key] = ForwardResult(feats, logits, head)
    return out


def model_loss(model: Model, outputs: dict, labels) -> tuple:
    """Arc-margin loss per output, combined with the multi-task weights for MultiView."""
    arc = model.topology.arc
    classes = model.params["head.classes"]
    parts = {key: arc_margin_loss(r.features, classes, labels, arc) for key, r in outputs.items()}
    if model.kind == MULTI_VIEW:
        total = multitask_loss(parts["A"], parts["V"], model.topology.lambda_a, model.topology.lambda_v)
    else:
        (total,) = parts.values()
    return total, parts


# ----------------------------------------------------------------------------
# embeddings

SUPPORTED = {
    UNIMODAL_A: ("A",),
    UNIMODAL_V: ("V",),
    MID_FUSION: ("A", "V", "AV"),
    MULTI_VIEW: ("A", "V"),
}


def embed(model: Model, sample: AVSample, modality: str) -> Tensor:
    """Verification embedding of one sample, always computed in infer mode.

    Unimodal and MidFusion branches give the pooled encoder output ('AV' on
    MidFusion is the concatenation); MultiView gives the shared-space
    projection.
    """
    if modality not in SUPPORTED[model.kind]:
        raise CapabilityError(f"{model.kind} cannot embed modality {modality!r}")
    dtype = model.params["head.fc1.weight"].dtype
    parts = []
    if modality in ("A", "AV"):
        if sample.audio is None:
            raise CapabilityError(f"utterance {sample.utterance_id} has no audio")
        enc = _audio_encoding(model, sample.audio[None], dtype)
        parts.append(_project(model, "audio", enc) if model.kind == MULTI_VIEW else enc)
    if modality in ("V", "AV"):
        if sample.video is None:
            raise CapabilityError(f"utterance {sample.utterance_id} has no video")
        enc = _video_encoding(model, sample.video, [sample.video.shape[0]], dtype)
        parts.append(_project(model, "video", enc) if model.kind == MULTI_VIEW else enc)
    vec = parts[0] if len(parts) == 1 else ad.concat(parts)
    return Tensor(vec.data.reshape(-1).copy(), dtype=vec.dtype)


def audio_only(features: np.ndarray, utterance_id: int = -1) -> AVSample:
    """Wrap a logmel matrix (e.g. from a WAV file) as an audio-only sample."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[1] != MEL_BINS:
        raise ConfigError(f"expected a T x {MEL_BINS} logmel matrix, got {features.shape}")
    return AVSample(-1, -1, utterance_id, features, None)
