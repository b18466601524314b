"""Checkpoint files.

Layout (little-endian)::

    b"MVSC" | u32 format version | u32 metadata length | metadata JSON (UTF-8)
    | raw tensor bytes at the offsets listed in the metadata tensor table
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from avsv.errors import BadMagicError, TopologyMismatchError, TruncatedError, VersionError
from avsv.models.config import ArcConfig, EncoderConfig, HeadConfig, Topology
from avsv.models.zoo import Model, build_model

MAGIC = b"MVSC"
VERSION = 1
_HEADER = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    params: dict
    optimizer: dict
    epoch: int
    lr: float
    best_val: float
    bad_epochs: int
    topology: dict
    audio_cfg: dict
    video_cfg: dict
    train_cfg: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    version: int = VERSION

    @property
    def kind(self) -> str:
        return self.topology["kind"]


def topology_to_dict(t: Topology) -> dict:
    return asdict(t)


def topology_from_dict(d: dict) -> Topology:
    d = dict(d)
    return Topology(head=HeadConfig(**d.pop("head")), arc=ArcConfig(**d.pop("arc")), **d)


def encoder_to_dict(cfg: EncoderConfig) -> dict:
    d = asdict(cfg)
    d["conv_blocks"] = [list(b) for b in cfg.conv_blocks]
    d["frame_shape"] = list(cfg.frame_shape)
    return d


def encoder_from_dict(d: dict) -> EncoderConfig:
    return EncoderConfig(**d)


def snapshot(model: Model, optimizer: dict, epoch: int, lr: float, best_val: float, bad_epochs: int,
             train_cfg: Optional[dict] = None, log: Optional[list] = None) -> Checkpoint:
    return Checkpoint(
        params={k: v.copy() for k, v in model.state_dict().items()},
        optimizer={k: v.copy() for k, v in optimizer.items()},
        epoch=epoch, lr=lr, best_val=best_val, bad_epochs=bad_epochs,
        topology=topology_to_dict(model.topology),
        audio_cfg=encoder_to_dict(model.audio_cfg),
        video_cfg=encoder_to_dict(model.video_cfg),
        train_cfg=dict(train_cfg or {}),
        log=[dict(r) for r in (log or [])],
    )


def restore_model(model: Model, ckpt: Checkpoint) -> None:
    """Copy checkpoint parameters into ``model``; topologies must agree."""
    if ckpt.kind != model.kind:
        raise TopologyMismatchError(f"checkpoint holds a {ckpt.kind} model, cannot load into {model.kind}")
    model.load_state_dict(ckpt.params)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    model = build_model(topology_from_dict(ckpt.topology), encoder_from_dict(ckpt.audio_cfg),
                        encoder_from_dict(ckpt.video_cfg), seed=0)
    model.load_state_dict(ckpt.params)
    return model.eval()


def _table(arrays: dict, table: dict, offset: int, blobs: list, group: str) -> int:
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = le.tobytes()
        table[f"{group}/{name}"] = {"dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset,
                                    "nbytes": len(data)}
        blobs.append(data)
        offset += len(data)
    return offset


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    table: dict = {}
    blobs: list = []
    end = _table(ckpt.params, table, 0, blobs, "param")
    _table(ckpt.optimizer, table, end, blobs, "optim")
    meta = {
        "epoch": ckpt.epoch, "lr": ckpt.lr, "best_val": ckpt.best_val, "bad_epochs": ckpt.bad_epochs,
        "topology": ckpt.topology, "audio_cfg": ckpt.audio_cfg, "video_cfg": ckpt.video_cfg,
        "train_cfg": ckpt.train_cfg, "log": ckpt.log, "tensors": table,
    }
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([_HEADER.pack(MAGIC, ckpt.version, len(text)), text] + blobs)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        if not MAGIC.startswith(blob[:4]):
            raise BadMagicError("not a checkpoint file: bad magic")
        raise TruncatedError("checkpoint header truncated")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint file: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version} unsupported (expected {VERSION})")
    start = _HEADER.size + mlen
    if len(blob) < start:
        raise TruncatedError("checkpoint metadata truncated")
    meta = json.loads(blob[_HEADER.size:start].decode("utf-8"))
    payload = memoryview(blob)[start:]
    groups = {"param": {}, "optim": {}}
    for key, entry in meta["tensors"].items():
        group, name = key.split("/", 1)
        if entry["offset"] + entry["nbytes"] > len(payload):
            raise TruncatedError(f"checkpoint tensor {name} truncated")
        dt = np.dtype(entry["dtype"])
        arr = np.frombuffer(payload, dtype=dt, count=entry["nbytes"] // dt.itemsize, offset=entry["offset"])
        groups[group][name] = arr.astype(dt.newbyteorder("="), copy=True).reshape(entry["shape"])
    return Checkpoint(
        params=groups["param"], optimizer=groups["optim"], epoch=meta["epoch"], lr=meta["lr"],
        best_val=meta["best_val"], bad_epochs=meta["bad_epochs"], topology=meta["topology"],
        audio_cfg=meta["audio_cfg"], video_cfg=meta["video_cfg"], train_cfg=meta["train_cfg"],
        log=meta["log"], version=version,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
