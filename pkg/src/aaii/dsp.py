"""Mel spectrogram front end.

Framing is fixed: 1024-sample frames, hop 512, periodic Hamming window,
40 triangular mel bands (HTK mel scale, 0 Hz to Nyquist).  Noise reduction
subtracts the per-band median over the whole clip and clamps at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dataset import AudioClip

FRAME_LENGTH = 1024
HOP_LENGTH = 512
N_BINS = FRAME_LENGTH // 2 + 1
N_MELS = 40
LOG_EPS = 1e-8


class ClipTooShort(ValueError):
    pass


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray = field(repr=False)
    f_min: float
    f_max: float
    sample_rate: int

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    def center_frequencies(self) -> np.ndarray:
        m = np.linspace(hz_to_mel(self.f_min), hz_to_mel(self.f_max), self.n_bands + 2)
        return mel_to_hz(m[1:-1])


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_mels: int = N_MELS, n_fft: int = FRAME_LENGTH,
                   f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular filters with unit peak, evenly spaced on the mel scale."""
    if f_max is None:
        f_max = sample_rate / 2.0
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        raise ValueError(f"mel bands {empty.tolist()} cover no FFT bin at {sample_rate} Hz; "
                         "use fewer bands or a higher sample rate")
    weights.setflags(write=False)
    return MelFilterbank(weights, float(f_min), float(f_max), int(sample_rate))


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray = field(repr=False)
    hop_s: float
    clip_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


_WINDOW = np.hamming(FRAME_LENGTH + 1)[:-1]  # periodic
_WINDOW.setflags(write=False)


def n_frames_for(n_samples: int) -> int:
    if n_samples < FRAME_LENGTH:
        return 0
    return (n_samples - FRAME_LENGTH) // HOP_LENGTH + 1


def stft_magnitude(clip: AudioClip) -> np.ndarray:
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < FRAME_LENGTH:
        raise ClipTooShort(f"clip {clip.clip_id!r}: {x.size} samples, need at least {FRAME_LENGTH}")
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LENGTH)[::HOP_LENGTH]
    return np.abs(np.fft.rfft(frames * _WINDOW, axis=1))


def apply_mel(spec: np.ndarray, fb: MelFilterbank, hop_s: float | None = None,
              clip_id: str = "") -> MelSpectrogram:
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != fb.weights.shape[1]:
        raise ValueError(f"spectrum has shape {spec.shape}, filterbank expects "
                         f"{fb.weights.shape[1]} columns")
    if hop_s is None:
        hop_s = HOP_LENGTH / fb.sample_rate
    return MelSpectrogram(spec @ fb.weights.T, hop_s, clip_id)


def median_noise_reduce(mel: MelSpectrogram) -> MelSpectrogram:
    frames = mel.frames
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    out = np.maximum(frames - np.median(frames, axis=0, keepdims=True), 0.0)
    return MelSpectrogram(out, mel.hop_s, mel.clip_id)


def log_compress(mel: MelSpectrogram, eps: float = LOG_EPS) -> MelSpectrogram:
    return MelSpectrogram(np.log(mel.frames + eps), mel.hop_s, mel.clip_id)


def clip_to_mel(clip: AudioClip, noise_reduce: bool = True) -> MelSpectrogram:
    """Audio to (optionally noise-reduced) linear-magnitude mel spectrogram."""
    fb = mel_filterbank(clip.sample_rate)
    mel = apply_mel(stft_magnitude(clip), fb, HOP_LENGTH / clip.sample_rate, clip.clip_id)
    return median_noise_reduce(mel) if noise_reduce else mel


def clip_to_log_mel(clip: AudioClip, eps: float = LOG_EPS) -> MelSpectrogram:
    """The full front end: STFT, mel, median noise reduction, log."""
    return log_compress(clip_to_mel(clip), eps)


def dump_csv(mel: MelSpectrogram, path) -> None:
    np.savetxt(path, mel.frames, delimiter=",", fmt="%.9g")
