from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class AVSample:
    """One utterance: logmel frames, face frames and identity bookkeeping.

    ``audio`` is ``(T_a, 64)`` float32; ``video`` is ``(T_v, C, H, W)``
    float32. Either may be ``None`` for single-modality inputs such as a
    WAV file handed to the verifier.
    """

    speaker_id: int
    video_id: int
    utterance_id: int
    audio: Optional[np.ndarray]
    video: Optional[np.ndarray]
    missing_face: bool = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, AVSample):
            return NotImplemented
        return (
            (self.speaker_id, self.video_id, self.utterance_id, self.missing_face)
            == (other.speaker_id, other.video_id, other.utterance_id, other.missing_face)
            and _same(self.audio, other.audio)
            and _same(self.video, other.video)
        )


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()
