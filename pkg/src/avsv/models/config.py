"""Declarative configuration for encoders, heads and network topologies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from avsv.errors import ConfigError

UNIMODAL_A = "UnimodalA"
UNIMODAL_V = "UnimodalV"
MID_FUSION = "MidFusion"
MULTI_VIEW = "MultiView"
TOPOLOGIES = (UNIMODAL_A, UNIMODAL_V, MID_FUSION, MULTI_VIEW)

MEL_BINS = 64

# Inverted-residual block table of the audio MobileNetV2 as [t, c, n, s]
# (expansion, channels, repeats, stride). Kept for the mirror-paper preset.
MOBILENETV2_AUDIO_BLOCKS = (
    (3, 32, 1, 1), (4, 32, 1, 1), (6, 64, 1, 2), (4, 64, 1, 1),
    (4, 64, 1, 1), (6, 128, 1, 2), (6, 128, 1, 1), (4, 128, 1, 1),
    (6, 256, 1, 2), (4, 256, 1, 1), (5, 256, 1, 1), (4, 256, 1, 1),
)


@dataclass
class EncoderConfig:
    """One modality encoder: a stack of conv blocks, a frame projection and pooling.

    ``conv_blocks`` holds ``(out_channels, kernel, stride)`` triples. Audio
    input is a ``T x 64`` logmel sequence treated as a one-channel image;
    video input is a sequence of ``C x H x W`` frames encoded independently.
    """

    modality: str
    conv_blocks: list
    encoding_dim: int
    frame_shape: tuple = (MEL_BINS,)
    attention_dim: int = 32
    pad: bool = False

    def __post_init__(self):
        self.conv_blocks = [tuple(int(v) for v in b) for b in self.conv_blocks]
        self.frame_shape = tuple(int(v) for v in self.frame_shape)
        self.validate()

    def validate(self) -> None:
        if self.modality not in ("audio", "video"):
            raise ConfigError(f"encoder modality must be 'audio' or 'video', got {self.modality!r}")
        if not self.conv_blocks:
            raise ConfigError(f"{self.modality} encoder needs at least one conv block")
        for b in self.conv_blocks:
            if len(b) != 3 or min(b) < 1:
                raise ConfigError(f"{self.modality} conv block {b} must be three positive ints")
        if self.encoding_dim <= 0:
            raise ConfigError(f"{self.modality} encoding_dim must be positive, got {self.encoding_dim}")
        if self.modality == "audio" and self.frame_shape != (MEL_BINS,):
            raise ConfigError(f"audio frames must have {MEL_BINS} mel bins, got {self.frame_shape}")
        if self.modality == "video" and len(self.frame_shape) != 3:
            raise ConfigError(f"video frame_shape must be (C, H, W), got {self.frame_shape}")


def desk_audio() -> EncoderConfig:
    return EncoderConfig("audio", [(8, 3, 2), (16, 3, 2), (16, 3, 2)], 64)


VIDEO_BLOCKS = [(16, 3, 2), (32, 3, 2), (64, 3, 1)]


def desk_video() -> EncoderConfig:
    return EncoderConfig("video", VIDEO_BLOCKS, 128, frame_shape=(3, 16, 16))


def mirror_paper_audio() -> EncoderConfig:
    """Plain-conv stand-in shaped after the MobileNetV2 table; not exercised at desk scale."""
    blocks = [(c, 3, s) for _, c, n, s in MOBILENETV2_AUDIO_BLOCKS for _ in range(n)]
    return EncoderConfig("audio", blocks, 356, attention_dim=128, pad=True)


def mirror_paper_video() -> EncoderConfig:
    blocks = [(64, 7, 2), (256, 3, 2), (512, 3, 2), (1024, 3, 2), (2048, 3, 2)]
    return EncoderConfig("video", blocks, 2048, frame_shape=(3, 112, 112), pad=True)


@dataclass
class HeadConfig:
    """Classifier head FC -> ReLU -> [BN] -> dropout -> cosine class layer.

    ``use_batchnorm=None`` means automatic: on for every topology except
    MultiView, whose shared head must not normalise.
    """

    hidden_dim: int = 128
    dropout_p: float = 0.2
    use_batchnorm: Optional[bool] = None
    num_classes: int = 32


@dataclass
class ArcConfig:
    scale: float = 30.0
    margin: float = 0.2

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"arc scale must be positive, got {self.scale}")
        if not 0 <= self.margin < math.pi / 2:
            raise ConfigError(f"arc margin must lie in [0, pi/2), got {self.margin}")


@dataclass
class Topology:
    kind: str
    head: HeadConfig = field(default_factory=HeadConfig)
    arc: ArcConfig = field(default_factory=ArcConfig)
    proj_dim: Optional[int] = None
    lambda_a: float = 1.0
    lambda_v: float = 1.0

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.kind!r}; expected one of {TOPOLOGIES}")
        if self.lambda_a < 0 or self.lambda_v < 0:
            raise ConfigError("multi-task weights must be nonnegative")
        h = self.head
        if h.hidden_dim <= 0 or h.num_classes <= 0:
            raise ConfigError("head hidden_dim and num_classes must be positive")
        if not 0 <= h.dropout_p < 1:
            raise ConfigError(f"head dropout_p must lie in [0, 1), got {h.dropout_p}")
        if self.kind == MULTI_VIEW:
            if self.proj_dim is None or self.proj_dim <= 0:
                raise ConfigError("MultiView needs a positive proj_dim for the shared space")
            if h.use_batchnorm:
                raise ConfigError("MultiView shared head cannot use batch normalisation")

    @property
    def uses_audio(self) -> bool:
        return self.kind != UNIMODAL_V

    @property
    def uses_video(self) -> bool:
        return self.kind != UNIMODAL_A

    @property
    def batchnorm(self) -> bool:
        if self.head.use_batchnorm is None:
            return self.kind != MULTI_VIEW
        return bool(self.head.use_batchnorm)
