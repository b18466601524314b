"""Run configuration: a flat ``section.key = value`` text file.

Every key has a default below. Unknown keys, malformed lines and values of
the wrong type are rejected with the offending key path. Values are Python
literals (``32``, ``0.5``, ``true``, ``[(8, 3, 2)]``, ``"text"``); bare words
are read as strings.
"""
from __future__ import annotations

import ast
from collections import OrderedDict
from pathlib import Path

from avsv.data.synth import SynthConfig
from avsv.errors import ConfigError
from avsv.models.config import (
    VIDEO_BLOCKS,
    ArcConfig,
    EncoderConfig,
    HeadConfig,
    Topology,
    desk_audio,
)
from avsv.trainer import TrainConfig

_AUDIO = desk_audio()

DEFAULTS = OrderedDict([
    ("run.seed", 7),
    ("run.threads", 1),
    ("synth.num_speakers", 32),
    ("synth.videos_per_speaker", 4),
    ("synth.utts_per_video", 4),
    ("synth.k", 16),
    ("synth.sigma_audio", 1.0),
    ("synth.sigma_video", 1.5),
    ("synth.sigma_session", 0.3),
    ("synth.missing_face_prob", 0.02),
    ("synth.t_min", 50),
    ("synth.t_max", 150),
    ("synth.video_frames", 4),
    ("synth.frame_shape", (3, 16, 16)),
    ("audio.conv_blocks", [tuple(b) for b in _AUDIO.conv_blocks]),
    ("audio.encoding_dim", _AUDIO.encoding_dim),
    ("audio.attention_dim", _AUDIO.attention_dim),
    ("audio.pad", False),
    ("video.conv_blocks", [tuple(b) for b in VIDEO_BLOCKS]),
    ("video.encoding_dim", 128),
    ("video.pad", False),
    ("head.hidden_dim", 128),
    ("head.dropout_p", 0.2),
    ("head.batchnorm", "auto"),
    ("arc.scale", 30.0),
    ("arc.margin", 0.2),
    ("topology.proj_dim", 64),
    ("topology.lambda_a", 1.0),
    ("topology.lambda_v", 1.0),
    ("train.lr", 0.005),
    ("train.momentum", 0.9),
    ("train.plateau_factor", 0.95),
    ("train.plateau_patience", 2),
    ("train.min_improvement", 1e-5),
    ("train.batch_size", 32),
    ("train.max_epochs", 30),
    ("train.t_crop", 100),
    ("train.shards", 1),
    ("eval.conditions", "AA,VV,AVAV,AV_X,A_AV,V_AV"),
    ("eval.trial_split", "val"),
    ("eval.threshold", 0.5),
    ("paths.data", ""),
    ("paths.trials", ""),
    ("paths.out", ""),
])

_TRUE = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


def _literal(text: str):
    low = text.lower()
    if low in _TRUE:
        return _TRUE[low]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    value = _literal(raw) if isinstance(raw, str) else raw
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {raw!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
        return float(value)
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {raw!r}")
        try:
            if default and isinstance(default[0], tuple):
                return [tuple(int(v) for v in item) for item in value]
            return tuple(int(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: malformed list {raw!r}") from exc
    return value if isinstance(value, str) else str(raw)


class RunConfig:
    """Resolved key/value settings with typed accessors for each component."""

    def __init__(self, values=None):
        self.values = OrderedDict(DEFAULTS)
        for key, raw in (values or {}).items():
            self.set(key, raw)

    def set(self, key: str, raw) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, raw)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def synth(self) -> SynthConfig:
        return _build(SynthConfig, "synth", seed=self["run.seed"], **self.section("synth"))

    def audio_encoder(self) -> EncoderConfig:
        return _build(EncoderConfig, "audio", modality="audio", **self.section("audio"))

    def video_encoder(self, frame_shape) -> EncoderConfig:
        return _build(EncoderConfig, "video", modality="video", frame_shape=tuple(frame_shape),
                      **self.section("video"))

    def topology(self, kind: str, num_classes: int) -> Topology:
        head = dict(self.section("head"))
        bn = head.pop("batchnorm").lower()
        if bn not in ("auto", "true", "false"):
            raise ConfigError(f"head.batchnorm: expected auto, true or false, got {bn!r}")
        head_cfg = HeadConfig(use_batchnorm=None if bn == "auto" else bn == "true", num_classes=num_classes,
                              **head)
        arc = _build(ArcConfig, "arc", **self.section("arc"))
        topo = self.section("topology")
        return _build(Topology, "topology", kind=kind, head=head_cfg, arc=arc,
                      proj_dim=topo["proj_dim"] if kind == "MultiView" else None,
                      lambda_a=topo["lambda_a"], lambda_v=topo["lambda_v"])

    def train(self) -> TrainConfig:
        cfg = _build(TrainConfig, "train", seed=self["run.seed"], **self.section("train"))
        cfg.validate()
        return cfg

    def conditions(self) -> list:
        return [c.strip() for c in self["eval.conditions"].split(",") if c.strip()]

    def dump(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.values.items())


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return "[" + ", ".join(repr(tuple(x)) for x in v) + "]"
    return repr(v) if isinstance(v, str) and (not v or v != v.strip()) else str(v)


def _build(cls, section: str, **kwargs):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> dict:
    out = OrderedDict()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{n}: unknown config key {key!r}")
        out[key] = value
    return out


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file, then ``key=value`` overrides (which win)."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        for key, raw in parse_config(text, str(path)).items():
            cfg.set(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw.strip())
    return cfg
