"""Synthetic corpus, logmel front end, split/trial protocol and file formats."""
from avsv.data.features import read_wav, wav_to_logmel, write_wav
from avsv.data.protocol import (
    CONDITIONS,
    TrialPair,
    read_trials,
    sample_trials,
    split_train_val,
    with_condition,
    write_trials,
)
from avsv.data.sample import AVSample
from avsv.data.storage import load_dataset, save_dataset
from avsv.data.synth import Dataset, DatasetManifest, SynthConfig, gen_synthetic, make_dataset

__all__ = [
    "AVSample", "CONDITIONS", "Dataset", "DatasetManifest", "SynthConfig", "TrialPair",
    "gen_synthetic", "load_dataset", "make_dataset", "read_trials", "read_wav",
    "sample_trials", "save_dataset", "split_train_val", "wav_to_logmel", "with_condition",
    "write_trials", "write_wav",
]
