"""Encoders, pooling, heads, losses and the four network topologies."""
from avsv.models.config import (
    MID_FUSION,
    MULTI_VIEW,
    TOPOLOGIES,
    UNIMODAL_A,
    UNIMODAL_V,
    ArcConfig,
    EncoderConfig,
    HeadConfig,
    Topology,
    desk_audio,
    desk_video,
    mirror_paper_audio,
    mirror_paper_video,
)
from avsv.models.layers import attentive_pool, temporal_pool
from avsv.models.losses import arc_margin_loss, multitask_loss
from avsv.models.zoo import (
    Batch,
    ForwardResult,
    Model,
    build_model,
    collate,
    embed,
    forward_train,
    model_loss,
)

__all__ = [
    "MID_FUSION", "MULTI_VIEW", "TOPOLOGIES", "UNIMODAL_A", "UNIMODAL_V",
    "ArcConfig", "Batch", "EncoderConfig", "ForwardResult", "HeadConfig", "Model",
    "Topology", "arc_margin_loss", "attentive_pool", "build_model", "collate",
    "desk_audio", "desk_video", "embed", "forward_train", "mirror_paper_audio",
    "mirror_paper_video", "model_loss", "multitask_loss", "temporal_pool",
]
