"""Train/validation split and verification trial sampling."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from avsv.errors import DataError

CONDITIONS = ("AA", "VV", "AVAV", "AV_X", "A_AV", "V_AV")


@dataclass(frozen=True)
class TrialPair:
    label: bool
    enrol_id: int
    test_id: int
    condition: str = "AA"

    def __post_init__(self):
        if self.enrol_id == self.test_id:
            raise DataError(f"trial pairs utterance {self.enrol_id} with itself")
        if self.condition not in CONDITIONS:
            raise DataError(f"unknown trial condition {self.condition!r}")


def split_train_val(manifest) -> tuple:
    """Hold out each speaker's highest video id; returns sorted (train ids, val ids)."""
    videos = defaultdict(set)
    for r in manifest.records:
        videos[r.speaker_id].add(r.video_id)
    single = sorted(s for s, v in videos.items() if len(v) < 2)
    if single:
        raise DataError(f"speakers {single} have a single video; cannot hold one out")
    held = {s: max(v) for s, v in videos.items()}
    train, val = [], []
    for r in manifest.records:
        (val if r.video_id == held[r.speaker_id] else train).append(r.utterance_id)
    return sorted(train), sorted(val)


def sample_trials(manifest, seed: int, condition: str = "AA") -> list:
    """One positive and one negative trial per utterance.

    The negative picks a different speaker uniformly first, then one of that
    speaker's utterances uniformly.
    """
    by_speaker = defaultdict(list)
    for r in sorted(manifest.records, key=lambda r: r.utterance_id):
        by_speaker[r.speaker_id].append(r.utterance_id)
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise DataError("trial sampling needs at least two speakers")
    lonely = [s for s in speakers if len(by_speaker[s]) < 2]
    if lonely:
        raise DataError(f"speakers {lonely} have a single utterance; no positive trial possible")
    rng = np.random.default_rng(seed)
    trials = []
    for r in sorted(manifest.records, key=lambda r: r.utterance_id):
        own = [u for u in by_speaker[r.speaker_id] if u != r.utterance_id]
        pos = own[int(rng.integers(len(own)))]
        others = [s for s in speakers if s != r.speaker_id]
        neg_spk = others[int(rng.integers(len(others)))]
        pool = by_speaker[neg_spk]
        neg = pool[int(rng.integers(len(pool)))]
        trials.append(TrialPair(True, r.utterance_id, pos, condition))
        trials.append(TrialPair(False, r.utterance_id, neg, condition))
    return trials


def with_condition(trials, condition: str) -> list:
    return [TrialPair(t.label, t.enrol_id, t.test_id, condition) for t in trials]


def write_trials(trials, path) -> None:
    lines = [f"{int(t.label)}\t{t.enrol_id}\t{t.test_id}\t{t.condition}\n" for t in trials]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_trials(path) -> list:
    trials = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4 or fields[0] not in ("0", "1"):
            raise DataError(f"{path}:{n}: expected 'label<TAB>enrol<TAB>test<TAB>condition'")
        trials.append(TrialPair(fields[0] == "1", int(fields[1]), int(fields[2]), fields[3].strip()))
    return trials
