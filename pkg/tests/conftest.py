import numpy as np
import pytest

from avsv.data.synth import SynthConfig, gen_synthetic
from avsv.models.config import ArcConfig, EncoderConfig, HeadConfig, Topology


def tiny_audio(pad=False):
    return EncoderConfig("audio", [(2, 3, 2)], 4, attention_dim=3, pad=pad)


def tiny_video(frame_shape=(2, 5, 5)):
    return EncoderConfig("video", [(2, 3, 2)], 4, frame_shape=frame_shape)


def tiny_topology(kind, num_classes=3, dropout_p=0.0, **kw):
    proj = 3 if kind == "MultiView" else None
    return Topology(kind, head=HeadConfig(hidden_dim=5, dropout_p=dropout_p, num_classes=num_classes),
                    arc=ArcConfig(scale=4.0, margin=0.2), proj_dim=proj, **kw)


def small_synth(**kw):
    base = dict(num_speakers=4, videos_per_speaker=2, utts_per_video=3, t_min=10, t_max=20,
                frame_shape=(2, 5, 5), video_frames=2, seed=3)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return gen_synthetic(small_synth())


# acceptance verdict lines, printed as their own section after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
