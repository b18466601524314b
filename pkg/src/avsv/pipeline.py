"""Desk-scale reference setup and the end-to-end benchmark run."""
from __future__ import annotations

from dataclasses import dataclass, field

from avsv.data.protocol import sample_trials, split_train_val, with_condition
from avsv.data.synth import Dataset, SynthConfig, gen_synthetic
from avsv.evaluation import compute_eer, fuse_scores, score_condition
from avsv.models.config import (
    MID_FUSION,
    MULTI_VIEW,
    UNIMODAL_A,
    UNIMODAL_V,
    ArcConfig,
    HeadConfig,
    Topology,
    desk_audio,
    desk_video,
)
from avsv.models.zoo import Model, build_model
from avsv.trainer import TrainConfig, train

DESK_PROJ_DIM = 64
DESK_HIDDEN = 128


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Optimiser settings that converge on the synthetic corpus within 30 epochs."""
    base = dict(lr=0.005, momentum=0.9, batch_size=32, max_epochs=30, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def desk_topology(kind: str, num_classes: int) -> Topology:
    return Topology(
        kind,
        head=HeadConfig(hidden_dim=DESK_HIDDEN, dropout_p=0.2, num_classes=num_classes),
        arc=ArcConfig(),
        proj_dim=DESK_PROJ_DIM if kind == MULTI_VIEW else None,
    )


@dataclass
class Split:
    full: Dataset
    train: Dataset
    val: Dataset

    @classmethod
    def of(cls, ds: Dataset) -> "Split":
        tr, va = split_train_val(ds.manifest)
        return cls(ds, ds.subset(tr), ds.subset(va))


@dataclass
class BenchmarkResult:
    eer: dict = field(default_factory=dict)
    logs: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def train_topology(kind: str, split: Split, seed: int, train_cfg: TrainConfig = None) -> tuple:
    model = build_model(desk_topology(kind, split.train.manifest.speakers), desk_audio(), desk_video(), seed=seed)
    ckpt, log = train(model, split.train, split.val, train_cfg or desk_train_config(seed))
    return model, log


def run_benchmark(seed: int = 7, kinds=(UNIMODAL_A, UNIMODAL_V, MID_FUSION, MULTI_VIEW),
                  synth: SynthConfig = None, train_cfg: TrainConfig = None) -> BenchmarkResult:
    """Generate, train every topology, and score held-out-video trials.

    Keys of ``eer`` are ``"<topology>:<condition>"`` plus the fusion rows
    ``"fusion:A+V"``, ``"fusion:A+V+AV"`` and ``"fusion:MV-A+MV-V"``.
    """
    synth = synth or SynthConfig(seed=seed)
    split = Split.of(gen_synthetic(synth))
    base = sample_trials(split.val.manifest, seed)
    samples = split.val.by_id()
    res = BenchmarkResult()
    sets = {}
    for kind in kinds:
        model, log = train_topology(kind, split, seed, train_cfg)
        res.models[kind], res.logs[kind] = model, log
        conds = {UNIMODAL_A: ["AA"], UNIMODAL_V: ["VV"], MID_FUSION: ["AVAV"],
                 MULTI_VIEW: ["AA", "VV", "AV_X", "A_AV", "V_AV"]}[kind]
        for cond in conds:
            sets[(kind, cond)] = score_condition(model, with_condition(base, cond), samples, cond, kind)
    for key, s in sets.items():
        res.eer[f"{key[0]}:{key[1]}"] = compute_eer(s).eer
    if (UNIMODAL_A, "AA") in sets and (UNIMODAL_V, "VV") in sets:
        av = [sets[(UNIMODAL_A, "AA")], sets[(UNIMODAL_V, "VV")]]
        res.eer["fusion:A+V"] = compute_eer(fuse_scores(av)).eer
        if (MID_FUSION, "AVAV") in sets:
            res.eer["fusion:A+V+AV"] = compute_eer(fuse_scores(av + [sets[(MID_FUSION, "AVAV")]])).eer
    if (MULTI_VIEW, "AA") in sets:
        res.eer["fusion:MV-A+MV-V"] = compute_eer(fuse_scores([sets[(MULTI_VIEW, "AA")], sets[(MULTI_VIEW, "VV")]])).eer
    return res


def trained_model(kind: str, seed: int = 7) -> tuple:
    """Train one topology on the reference corpus; returns ``(model, split)``."""
    split = Split.of(gen_synthetic(SynthConfig(seed=seed)))
    model, _ = train_topology(kind, split, seed)
    return model, split


__all__ = ["BenchmarkResult", "Split", "desk_topology", "desk_train_config", "run_benchmark", "trained_model",
           "Model"]
