import math
from collections import Counter

import numpy as np
import pytest
from conftest import small_synth

from avsv.data import (
    CONDITIONS,
    TrialPair,
    gen_synthetic,
    load_dataset,
    read_trials,
    read_wav,
    sample_trials,
    save_dataset,
    split_train_val,
    wav_to_logmel,
    with_condition,
    write_trials,
    write_wav,
)
from avsv.data.features import hz_to_mel, mel_to_hz
from avsv.data.storage import decode_dataset, encode_dataset
from avsv.data.synth import SynthConfig, identity_maps, speaker_latent
from avsv.errors import BadMagicError, ConfigError, DataError, TruncatedError, VersionError

# synthetic generator


def test_counts_and_ids(small_dataset):
    cfg = small_synth()
    n = cfg.num_speakers * cfg.videos_per_speaker * cfg.utts_per_video
    assert len(small_dataset) == n
    ids = [s.utterance_id for s in small_dataset.samples]
    assert len(set(ids)) == n
    for s in small_dataset.samples:
        assert s.video_id // cfg.videos_per_speaker == s.speaker_id
        assert cfg.t_min <= s.audio.shape[0] <= cfg.t_max and s.audio.shape[1] == 64
        assert s.audio.dtype == np.float32


def test_generation_is_byte_identical():
    a = encode_dataset(gen_synthetic(small_synth()))
    b = encode_dataset(gen_synthetic(small_synth()))
    assert a == b
    assert encode_dataset(gen_synthetic(small_synth(seed=4))) != a


def test_threads_do_not_change_output():
    assert encode_dataset(gen_synthetic(small_synth(), threads=3)) == encode_dataset(gen_synthetic(small_synth()))


def test_noiseless_limit():
    ds = gen_synthetic(small_synth(sigma_audio=0, sigma_video=0, sigma_session=0, missing_face_prob=0))
    for spk in range(4):
        frames = np.concatenate([s.audio for s in ds.samples if s.speaker_id == spk])
        assert np.all(frames == frames[0])


def test_all_faces_missing():
    ds = gen_synthetic(small_synth(missing_face_prob=1.0))
    for s in ds.samples:
        assert s.missing_face and s.video.shape == (1, 2, 5, 5) and not s.video.any()


def test_speaker_latent_is_seeded():
    cfg = SynthConfig()
    np.testing.assert_array_equal(speaker_latent(cfg, 3), speaker_latent(SynthConfig(), 3))
    assert speaker_latent(cfg, 3).shape == (16,)


@pytest.mark.parametrize("bad", [dict(videos_per_speaker=1), dict(t_min=0), dict(sigma_audio=-1),
                                 dict(missing_face_prob=1.5), dict(t_min=20, t_max=10)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig(**bad)


def test_identity_is_linearly_learnable():
    """Least-squares probes from the noiseless identity frames to one-hot speakers fit the training set."""
    cfg = SynthConfig()
    m_a, m_v = identity_maps(cfg)
    z = np.stack([speaker_latent(cfg, s) for s in range(cfg.num_speakers)])
    onehot = np.eye(cfg.num_speakers)
    for m in (m_a, m_v):
        feats = np.tanh(z @ m.T)
        x = np.hstack([feats, np.ones((cfg.num_speakers, 1))])
        w, *_ = np.linalg.lstsq(x, onehot, rcond=None)
        acc = np.mean((x @ w).argmax(axis=1) == np.arange(cfg.num_speakers))
        assert acc > 0.9


# featurizer


def test_silence_floor():
    out = wav_to_logmel(np.zeros(16000), 16000)
    assert out.shape == (98, 64)
    assert np.all(out == np.float32(math.log(1e-10)))


@pytest.mark.parametrize("n", [400, 401, 559, 560, 16000, 12345])
def test_frame_count(n):
    assert wav_to_logmel(np.zeros(n), 16000).shape[0] == 1 + (n - 400) // 160


def test_pure_tone_lands_in_its_mel_bracket():
    sr = 16000
    wave = np.sin(2 * np.pi * 440.0 * np.arange(sr) / sr)
    out = wav_to_logmel(wave, sr)
    # independent mel scale: natural-log form of the HTK formula
    top = 1127.0 * math.log(1 + (sr / 2) / 700.0)
    centers_mel = np.linspace(0, top, 66)[1:-1]
    target_mel = 1127.0 * math.log(1 + 440.0 / 700.0)
    bounds = np.concatenate([[-np.inf], (centers_mel[1:] + centers_mel[:-1]) / 2, [np.inf]])
    expected = int(np.searchsorted(bounds, target_mel) - 1)
    assert expected == 12
    assert np.all(out.argmax(axis=1) == expected)


def test_logmel_finite_and_errors(rng):
    assert np.all(np.isfinite(wav_to_logmel(rng.normal(size=2000) * 1e3, 16000)))
    with pytest.raises(DataError):
        wav_to_logmel(np.zeros(399), 16000)
    with pytest.raises(DataError):
        wav_to_logmel(np.zeros(4000), 4000)


def test_mel_scale_roundtrip():
    f = np.array([0.0, 440.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)


def test_wav_roundtrip(tmp_path):
    x = np.sin(np.linspace(0, 100, 8000)) * 0.5
    write_wav(tmp_path / "a.wav", x, 8000)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 8000
    np.testing.assert_allclose(y, x, atol=1 / 32768 + 1e-9)
    (tmp_path / "b.wav").write_bytes(b"nope")
    with pytest.raises(DataError):
        read_wav(tmp_path / "b.wav")


# storage


def test_dataset_roundtrip_bit_exact(tmp_path):
    ds = gen_synthetic(small_synth(num_speakers=2, missing_face_prob=0.5))
    save_dataset(ds, tmp_path / "d.mvsv")
    back = load_dataset(tmp_path / "d.mvsv")
    assert back.samples == ds.samples
    assert back.manifest.to_dict() == ds.manifest.to_dict()
    assert encode_dataset(back) == encode_dataset(ds)


def test_offsets_do_not_overlap(small_dataset):
    spans = []
    for r in small_dataset.manifest.records:
        spans.append((r.audio_offset, r.audio_offset + r.t_a * 64 * 4))
        spans.append((r.video_offset, r.video_offset + r.t_v * 50 * 4))
    spans.sort()
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


def test_storage_errors(small_dataset):
    blob = encode_dataset(small_dataset)
    with pytest.raises(BadMagicError):
        decode_dataset(b"XXXX" + blob[4:])
    bumped = bytearray(blob)
    bumped[4] += 1
    with pytest.raises(VersionError):
        decode_dataset(bytes(bumped))
    with pytest.raises(TruncatedError):
        decode_dataset(blob[:-10])
    with pytest.raises(TruncatedError):
        decode_dataset(blob[:30])


# split and trials


def test_split_partition(small_dataset):
    manifest = small_dataset.manifest
    train, val = split_train_val(manifest)
    all_ids = {r.utterance_id for r in manifest.records}
    assert set(train) | set(val) == all_ids and not set(train) & set(val)
    by_id = {r.utterance_id: r for r in manifest.records}
    per_speaker = Counter(by_id[u].speaker_id for u in val)
    assert set(per_speaker.values()) == {3}
    assert {by_id[u].speaker_id for u in train} == {by_id[u].speaker_id for u in val}
    for u in val:
        assert by_id[u].video_id % 2 == 1
    assert split_train_val(manifest) == (train, val)


def test_split_rejects_single_video(small_dataset):
    sub = small_dataset.subset([r.utterance_id for r in small_dataset.manifest.records if r.video_id % 2 == 0])
    with pytest.raises(DataError):
        split_train_val(sub.manifest)


def test_trials_construction(small_dataset):
    manifest = small_dataset.manifest
    trials = sample_trials(manifest, seed=5)
    spk = {r.utterance_id: r.speaker_id for r in manifest.records}
    assert len(trials) == 2 * len(manifest.records)
    for t in trials:
        assert t.enrol_id != t.test_id
        assert (spk[t.enrol_id] == spk[t.test_id]) == t.label
    assert sample_trials(manifest, seed=5) == trials
    assert sample_trials(manifest, seed=6) != trials


def test_trials_reject_degenerate(small_dataset):
    one_speaker = small_dataset.subset([r.utterance_id for r in small_dataset.manifest.records if r.speaker_id == 0])
    with pytest.raises(DataError):
        sample_trials(one_speaker.manifest, 0)
    singles = small_dataset.subset([r.utterance_id for r in small_dataset.manifest.records
                                    if r.utterance_id % 6 == 0])
    with pytest.raises(DataError):
        sample_trials(singles.manifest, 0)


def test_trial_file_roundtrip(tmp_path, small_dataset):
    trials = [t for c in CONDITIONS for t in with_condition(sample_trials(small_dataset.manifest, 1), c)]
    write_trials(trials, tmp_path / "t.tsv")
    assert read_trials(tmp_path / "t.tsv") == trials
    first = (tmp_path / "t.tsv").read_text().splitlines()[0].split("\t")
    assert first[0] in ("0", "1") and first[3] == "AA"


def test_trial_pair_invariants():
    with pytest.raises(DataError):
        TrialPair(True, 3, 3)
    with pytest.raises(DataError):
        TrialPair(True, 3, 4, "XX")
