"""Clip-level feature extraction with content-addressed caching.

A training or evaluation *item* is either a :class:`ClipRecord` (an audio
file as recorded) or a :class:`MixEntry` (a foreground file mixed with a
background file).  Items are keyed by content hashes so the same audio is
never decoded or transformed twice within a run.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import dsp
from .augment import DEFAULT_GAIN, MixEntry, mix_clips
from .dataset import AudioClip, ClipRecord, load_audio, read_wav, write_wav
from .featlearn import Codebook, fit_codebook, pool_clip, project

logger = logging.getLogger(__name__)

CACHE_ENV = "AAII_CACHE_DIR"

Item = Union[ClipRecord, MixEntry]


@dataclass(frozen=True)
class FeatLearnParams:
    patch_width: int = 4
    codebook_size: int = 500
    variance_keep: float = 0.99
    max_patches: int = 200_000
    max_iter: int = 100
    tol: float = 1e-5

    def to_dict(self) -> dict:
        return asdict(self)


def item_label(item: Item) -> str:
    return item.label if isinstance(item, MixEntry) else item.individual


def item_name(item: Item) -> str:
    if isinstance(item, MixEntry):
        return f"{Path(item.foreground.path).as_posix()}+{Path(item.background.path).as_posix()}"
    return Path(item.path).as_posix()


class FeatureExtractor:
    """Turns items into pooled feature vectors.

    ``cache_dir`` (or the ``AAII_CACHE_DIR`` environment variable) enables an
    on-disk cache of mixed audio at ``<cache_dir>/mixcache/<sha>.wav``.
    Mixtures are always rounded to float32 so cached and fresh runs agree.
    """

    def __init__(self, expected_rate: int | None = None, gain: float = DEFAULT_GAIN,
                 log_eps: float = dsp.LOG_EPS, cache_dir=None, dump_mel_dir=None):
        self.expected_rate = expected_rate
        self.gain = gain
        self.log_eps = log_eps
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_ENV) or None
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.dump_mel_dir = Path(dump_mel_dir) if dump_mel_dir else None
        self._file_hash: dict[str, str] = {}
        self._logmel: dict[str, np.ndarray] = {}
        self._pooled: dict[tuple[str, str], np.ndarray] = {}
        self.clamped_samples = 0

    # -- keys ---------------------------------------------------------------

    def file_hash(self, path) -> str:
        key = str(path)
        if key not in self._file_hash:
            self._file_hash[key] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        return self._file_hash[key]

    def item_key(self, item: Item) -> str:
        if isinstance(item, MixEntry):
            h = hashlib.sha256()
            h.update(self.file_hash(item.foreground.path).encode())
            h.update(self.file_hash(item.background.path).encode())
            h.update(repr(float(self.gain)).encode())
            return "mix-" + h.hexdigest()
        return "file-" + self.file_hash(item.path)

    # -- audio --------------------------------------------------------------

    def load(self, record: ClipRecord) -> AudioClip:
        clip = load_audio(record, self.expected_rate)
        if self.expected_rate is None:
            self.expected_rate = clip.sample_rate
        return clip

    def audio(self, item: Item) -> AudioClip:
        if not isinstance(item, MixEntry):
            return self.load(item)
        key = self.item_key(item)
        cached = self.cache_dir / "mixcache" / f"{key[4:]}.wav" if self.cache_dir else None
        if cached is not None and cached.exists():
            clip = read_wav(cached, clip_id=item_name(item))
            return AudioClip(clip.samples, clip.sample_rate, item_name(item))
        assert item.foreground.individual != item.background.individual
        mixed, clamped = mix_clips(self.load(item.foreground), self.load(item.background),
                                   self.gain, return_clamped=True)
        self.clamped_samples += clamped
        samples = mixed.samples.astype(np.float32).astype(np.float64)
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            tmp = cached.with_suffix(".tmp")
            write_wav(tmp, samples, mixed.sample_rate, float32=True)
            os.replace(tmp, cached)
        return AudioClip(samples, mixed.sample_rate, item_name(item))

    # -- features -----------------------------------------------------------

    def log_mel(self, item: Item) -> np.ndarray:
        key = self.item_key(item)
        if key not in self._logmel:
            clip = self.audio(item)
            mel = dsp.clip_to_mel(clip)
            if self.dump_mel_dir is not None:
                self.dump_mel_dir.mkdir(parents=True, exist_ok=True)
                dsp.dump_csv(mel, self.dump_mel_dir / f"{key}.csv")
            self._logmel[key] = dsp.log_compress(mel, self.log_eps).frames
        return self._logmel[key]

    def features(self, items: Sequence[Item], codebook: Codebook | None = None) -> np.ndarray:
        """Pooled vectors: 3*40 for raw mel, 3*M with a codebook."""
        tag = "mel" if codebook is None else codebook.digest()
        rows = []
        for item in items:
            key = (self.item_key(item), tag)
            if key not in self._pooled:
                lm = self.log_mel(item)
                frames = lm if codebook is None else project(lm, codebook)
                self._pooled[key] = pool_clip(frames)
            rows.append(self._pooled[key])
        if not rows:
            width = 3 * (dsp.N_MELS if codebook is None else codebook.M)
            return np.empty((0, width))
        return np.vstack(rows)

    def learn_codebook(self, items: Sequence[Item], params: FeatLearnParams, seed: int) -> Codebook:
        mels = [self.log_mel(it) for it in items]
        return fit_codebook(mels, w=params.patch_width, M=params.codebook_size,
                            variance_keep=params.variance_keep, max_patches=params.max_patches,
                            seed=seed, max_iter=params.max_iter, tol=params.tol)
