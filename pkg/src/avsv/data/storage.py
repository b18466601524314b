"""Binary dataset files.

Layout (all integers little-endian)::

    b"MVSV" | u32 format version | u32 manifest length | manifest JSON (UTF-8)
    | payload of float32 tensors at the manifest's byte offsets
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from avsv.data.sample import AVSample
from avsv.data.synth import FLOAT_BYTES, Dataset, DatasetManifest, make_dataset
from avsv.errors import BadMagicError, TruncatedError, VersionError
from avsv.models.config import MEL_BINS

MAGIC = b"MVSV"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def encode_dataset(ds: Dataset) -> bytes:
    # re-derive offsets so the file is always self-consistent
    ds = make_dataset(ds.samples, ds.manifest.frame_shape, ds.manifest.config)
    manifest = json.dumps(ds.manifest.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(manifest)), manifest]
    for s in ds.samples:
        parts.append(np.ascontiguousarray(s.audio, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(s.video, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_dataset(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        if not MAGIC.startswith(blob[:4]):
            raise BadMagicError("not a dataset file: bad magic")
        raise TruncatedError(f"dataset header truncated: {len(blob)} bytes")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"not a dataset file: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"dataset format version {version} unsupported (expected {VERSION})")
    start = _HEADER.size + mlen
    if len(blob) < start:
        raise TruncatedError("dataset manifest truncated")
    manifest = DatasetManifest.from_dict(json.loads(blob[_HEADER.size:start].decode("utf-8")))
    payload = memoryview(blob)[start:]
    if len(payload) < manifest.payload_size():
        raise TruncatedError(f"dataset payload truncated: {len(payload)} of {manifest.payload_size()} bytes")
    shape = tuple(manifest.frame_shape)
    pix = int(np.prod(shape))
    samples = []
    for r in manifest.records:
        audio = np.frombuffer(payload, dtype="<f4", count=r.t_a * MEL_BINS, offset=r.audio_offset)
        video = np.frombuffer(payload, dtype="<f4", count=r.t_v * pix, offset=r.video_offset)
        samples.append(AVSample(
            r.speaker_id, r.video_id, r.utterance_id,
            audio.reshape(r.t_a, MEL_BINS).astype(np.float32),
            video.reshape((r.t_v,) + shape).astype(np.float32),
            r.missing_face,
        ))
    return Dataset(manifest, samples)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


__all__ = ["MAGIC", "VERSION", "FLOAT_BYTES", "save_dataset", "load_dataset", "encode_dataset", "decode_dataset"]
