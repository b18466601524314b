"""Seeded synthetic audio-visual corpus with shared latent speaker identities.

Each speaker owns a latent vector ``z``. Two fixed random maps send it to a
64-dim logmel-like frame and to a face image, so both modalities carry the
same identity and cross-modal matching is learnable.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from avsv.data.sample import AVSample
from avsv.errors import ConfigError
from avsv.models.config import MEL_BINS

FLOAT_BYTES = 4


@dataclass
class SynthConfig:
    num_speakers: int = 32
    videos_per_speaker: int = 4
    utts_per_video: int = 4
    k: int = 16
    sigma_audio: float = 1.0
    sigma_video: float = 1.5
    sigma_session: float = 0.3
    missing_face_prob: float = 0.02
    t_min: int = 50
    t_max: int = 150
    video_frames: int = 4
    frame_shape: tuple = (3, 16, 16)
    seed: int = 7

    def __post_init__(self):
        self.frame_shape = tuple(int(v) for v in self.frame_shape)
        self.validate()

    def validate(self) -> None:
        if self.num_speakers < 1 or self.utts_per_video < 1 or self.k < 1:
            raise ConfigError("num_speakers, utts_per_video and k must be positive")
        if self.videos_per_speaker < 2:
            raise ConfigError(f"videos_per_speaker must be >= 2 for the hold-out split, got {self.videos_per_speaker}")
        if self.t_min < 1 or self.t_max < self.t_min:
            raise ConfigError(f"audio frame range [{self.t_min}, {self.t_max}] is invalid")
        if self.video_frames < 1:
            raise ConfigError("video_frames must be positive")
        if min(self.sigma_audio, self.sigma_video, self.sigma_session) < 0:
            raise ConfigError("noise scales must be nonnegative")
        if not 0 <= self.missing_face_prob <= 1:
            raise ConfigError(f"missing_face_prob must lie in [0, 1], got {self.missing_face_prob}")
        if len(self.frame_shape) != 3 or min(self.frame_shape) < 1:
            raise ConfigError(f"frame_shape must be three positive ints, got {self.frame_shape}")


@dataclass
class UtteranceRecord:
    speaker_id: int
    video_id: int
    utterance_id: int
    t_a: int
    t_v: int
    missing_face: bool
    audio_offset: int = 0
    video_offset: int = 0


@dataclass
class DatasetManifest:
    speakers: int
    records: list
    frame_shape: tuple
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "speakers": self.speakers,
            "frame_shape": list(self.frame_shape),
            "config": self.config,
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            speakers=int(d["speakers"]),
            records=[UtteranceRecord(**r) for r in d["records"]],
            frame_shape=tuple(d["frame_shape"]),
            config=dict(d.get("config", {})),
        )

    def payload_size(self) -> int:
        pix = int(np.prod(self.frame_shape))
        return sum((r.t_a * MEL_BINS + r.t_v * pix) * FLOAT_BYTES for r in self.records)

    def speaker_ids(self) -> list:
        return sorted({r.speaker_id for r in self.records})


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: list

    def __iter__(self) -> Iterator:
        yield self.manifest
        yield self.samples

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self) -> dict:
        return {s.utterance_id: s for s in self.samples}

    def subset(self, utterance_ids: Sequence[int]) -> "Dataset":
        keep = set(int(u) for u in utterance_ids)
        samples = [s for s in self.samples if s.utterance_id in keep]
        return make_dataset(samples, self.manifest.frame_shape, self.manifest.config)

    def speaker_labels(self) -> dict:
        """Contiguous class index per speaker id, in sorted speaker order."""
        return {spk: i for i, spk in enumerate(self.manifest.speaker_ids())}


def make_dataset(samples: Sequence[AVSample], frame_shape, config: dict) -> Dataset:
    """Build a manifest with byte offsets laid out in sample order."""
    records = []
    offset = 0
    for s in samples:
        audio_offset = offset
        offset += s.audio.size * FLOAT_BYTES
        video_offset = offset
        offset += s.video.size * FLOAT_BYTES
        records.append(UtteranceRecord(
            s.speaker_id, s.video_id, s.utterance_id, int(s.audio.shape[0]), int(s.video.shape[0]),
            bool(s.missing_face), audio_offset, video_offset,
        ))
    speakers = len({s.speaker_id for s in samples})
    return Dataset(DatasetManifest(speakers, records, tuple(frame_shape), dict(config)), list(samples))


def _config_echo(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["frame_shape"] = list(cfg.frame_shape)
    return d


def identity_maps(cfg: SynthConfig) -> tuple:
    """The global audio (64 x k) and video (pixels x k) identity maps."""
    rng = np.random.default_rng([cfg.seed, 0])
    pix = int(np.prod(cfg.frame_shape))
    m_a = rng.normal(0.0, 1.0 / np.sqrt(cfg.k), size=(MEL_BINS, cfg.k))
    m_v = rng.normal(0.0, 1.0 / np.sqrt(cfg.k), size=(pix, cfg.k))
    return m_a, m_v


def speaker_latent(cfg: SynthConfig, speaker_id: int) -> np.ndarray:
    return np.random.default_rng([cfg.seed, 1, speaker_id]).normal(size=cfg.k)


def _speaker_samples(cfg: SynthConfig, speaker_id: int, m_a, m_v) -> list:
    z = speaker_latent(cfg, speaker_id)
    rng = np.random.default_rng([cfg.seed, 2, speaker_id])
    audio_mean = np.tanh(m_a @ z)
    face_mean = np.tanh(m_v @ z)
    out = []
    for j in range(cfg.videos_per_speaker):
        video_id = speaker_id * cfg.videos_per_speaker + j
        for u in range(cfg.utts_per_video):
            utt_id = (speaker_id * cfg.videos_per_speaker + j) * cfg.utts_per_video + u
            t_a = int(rng.integers(cfg.t_min, cfg.t_max + 1))
            session = rng.normal(0.0, cfg.sigma_session, size=MEL_BINS)
            noise = rng.normal(0.0, cfg.sigma_audio, size=(t_a, MEL_BINS))
            audio = (audio_mean + session + noise).astype(np.float32)
            missing = bool(rng.random() < cfg.missing_face_prob)
            face_noise = rng.normal(0.0, cfg.sigma_video, size=(cfg.video_frames, face_mean.size))
            if missing:
                video = np.zeros((1,) + cfg.frame_shape, dtype=np.float32)
            else:
                video = (face_mean + face_noise).reshape((cfg.video_frames,) + cfg.frame_shape).astype(np.float32)
            out.append(AVSample(speaker_id, video_id, utt_id, audio, video, missing))
    return out


def gen_synthetic(cfg: SynthConfig, threads: int = 1) -> Dataset:
    """Generate the corpus; each speaker draws from its own seed-derived stream.

    Because streams are independent, ``threads`` only changes wall time.
    """
    cfg.validate()
    m_a, m_v = identity_maps(cfg)
    speakers = range(cfg.num_speakers)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda s: _speaker_samples(cfg, s, m_a, m_v), speakers))
    else:
        chunks = [_speaker_samples(cfg, s, m_a, m_v) for s in speakers]
    samples = [s for chunk in chunks for s in chunk]
    return make_dataset(samples, cfg.frame_shape, _config_echo(cfg))
