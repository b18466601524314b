"""Logmel front end and 16-bit PCM WAV reading."""
from __future__ import annotations

import wave

import numpy as np

from avsv.errors import DataError

N_MELS = 64
WIN_SECONDS = 0.025
HOP_SECONDS = 0.010
LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular HTK-mel filters from 0 Hz to Nyquist, shape (n_mels, n_fft // 2 + 1).

    Weights are evaluated at the exact FFT bin frequencies.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n_samples: int, win: int, hop: int) -> int:
    return 1 + (n_samples - win) // hop


def wav_to_logmel(waveform, sample_rate: int) -> np.ndarray:
    """64-band log-mel energies: 25 ms Hann window, 10 ms hop, magnitude STFT.

    No padding is applied, so ``T = 1 + (N - win) // hop``.
    """
    if sample_rate < 8000:
        raise DataError(f"sample rate must be at least 8000 Hz, got {sample_rate}")
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    win = int(round(WIN_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    if x.size < win:
        raise DataError(f"waveform has {x.size} samples, shorter than one {win}-sample window")
    n_fft = 1 << (win - 1).bit_length()
    t = frame_count(x.size, win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    frames = x[idx] * np.hanning(win + 2)[1:-1]
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    mel = mag @ mel_filterbank(sample_rate, n_fft).T
    return np.log(mel + LOG_FLOOR).astype(np.float32)


def read_wav(path) -> tuple:
    """Return ``(samples in [-1, 1), sample_rate)`` for a mono 16-bit PCM file."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise DataError(f"{path}: expected mono 16-bit PCM, got {w.getnchannels()} channels "
                                f"of {8 * w.getsampwidth()} bits")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
