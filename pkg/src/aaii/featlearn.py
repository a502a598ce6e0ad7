"""Unsupervised feature learning: PCA whitening plus spherical k-means.

Patches of ``w`` consecutive log-mel frames are whitened and matched
against a codebook of unit-norm centroids.  Rectified activations, pooled
over time, form the learned clip representation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import MelSpectrogram

logger = logging.getLogger(__name__)

CODEBOOK_FORMAT = "aaii-codebook/1"
WHITEN_REG = 1e-8


@dataclass(frozen=True)
class Codebook:
    mean: np.ndarray = field(repr=False)
    whitener: np.ndarray = field(repr=False)
    centroids: np.ndarray = field(repr=False)
    patch_width: int

    @property
    def M(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.whitener.shape[0]

    def to_dict(self) -> dict:
        return {
            "format": CODEBOOK_FORMAT,
            "w": self.patch_width,
            "M": self.M,
            "d": self.d,
            "mean": self.mean.tolist(),
            "whitener": self.whitener.tolist(),
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Codebook":
        if obj.get("format") != CODEBOOK_FORMAT:
            raise ValueError(f"unsupported codebook format {obj.get('format')!r}")
        cb = cls(np.asarray(obj["mean"], dtype=np.float64),
                 np.asarray(obj["whitener"], dtype=np.float64).reshape(obj["d"], -1),
                 np.asarray(obj["centroids"], dtype=np.float64).reshape(obj["M"], obj["d"]),
                 int(obj["w"]))
        return cb

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_dict(json.loads(Path(path).read_text()))


def extract_patches(mel_logs: Sequence[MelSpectrogram | np.ndarray], w: int) -> np.ndarray:
    """Stack every run of ``w`` consecutive frames (hop 1), flattened time-major."""
    chunks = []
    for mel in mel_logs:
        frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
        if frames.shape[0] < w:
            warnings.warn(f"skipping clip {getattr(mel, 'clip_id', '')!r}: "
                          f"{frames.shape[0]} frames < patch width {w}", stacklevel=2)
            continue
        chunks.append(_patches(frames, w))
    if not chunks:
        n_bands = 0 if not mel_logs else np.asarray(getattr(mel_logs[0], "frames", mel_logs[0])).shape[1]
        return np.empty((0, w * n_bands))
    return np.concatenate(chunks, axis=0)


def _patches(frames: np.ndarray, w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(frames, w, axis=0)  # (T-w+1, F, w)
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(win.shape[0], -1)


def fit_whitener(patches: np.ndarray, variance_keep: float = 0.99) -> tuple[np.ndarray, np.ndarray]:
    """PCA whitening.  Returns ``(mean, whitener)``; whitener rows are
    principal axes in descending eigenvalue order, scaled by
    ``1/sqrt(eigenvalue + 1e-8)``."""
    X = np.asarray(patches, dtype=np.float64)
    n, D = X.shape
    if n < D + 1:
        raise ValueError(f"need at least {D + 1} patches to fit a {D}-dim whitener, got {n}")
    if not 0 < variance_keep <= 1:
        raise ValueError("variance_keep must be in (0, 1]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # sign convention: largest-magnitude loading positive
    idx = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[idx, np.arange(D)])
    total = evals.sum()
    if total <= 0:
        d = 1
    else:
        cum = np.cumsum(evals) / total
        d = int(np.searchsorted(cum, variance_keep - 1e-12) + 1)
        d = min(d, D)
    whitener = evecs[:, :d].T / np.sqrt(evals[:d] + WHITEN_REG)[:, None]
    return mean, whitener


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


@dataclass
class KMeansTrace:
    objective: list[float] = field(default_factory=list)
    movement: list[float] = field(default_factory=list)
    reseeds: int = 0


def spherical_kmeans(whitened: np.ndarray, M: int, seed: int = 0, max_iter: int = 100,
                     tol: float = 1e-5, trace: KMeansTrace | None = None) -> np.ndarray:
    """Spherical k-means on the unit-normalized rows of ``whitened``.

    Each iteration assigns every vector to its highest dot-product centroid
    and replaces each centroid with the normalized sum of its members.  Empty
    clusters are reseeded with a random data vector.  Stops when the mean
    centroid displacement falls below ``tol``.
    """
    X = _normalize_rows(np.asarray(whitened, dtype=np.float64))
    n = X.shape[0]
    if M < 1:
        raise ValueError("M must be positive")
    if M > n:
        raise ValueError(f"codebook size {M} exceeds number of data vectors {n}")
    rng = np.random.default_rng(seed)
    C = X[rng.choice(n, size=M, replace=False)].copy()
    trace = trace if trace is not None else KMeansTrace()
    rows = np.arange(n)
    for _ in range(max_iter):
        sims = X @ C.T
        assign = np.argmax(sims, axis=1)
        trace.objective.append(float(sims[rows, assign].mean()))
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        newC = _normalize_rows(sums)
        empty = np.flatnonzero(np.linalg.norm(sums, axis=1) == 0)
        for j in empty:
            newC[j] = X[rng.integers(n)]
            trace.reseeds += 1
        # a reseed can pick a zero vector; keep centroids on the sphere
        dead = np.linalg.norm(newC, axis=1) == 0
        if dead.any():
            newC[dead] = C[dead]
        move = float(np.linalg.norm(newC - C, axis=1).mean())
        trace.movement.append(move)
        C = newC
        if move < tol:
            break
    return C


def fit_codebook(mel_logs: Sequence[MelSpectrogram | np.ndarray], w: int = 4, M: int = 500,
                 variance_keep: float = 0.99, max_patches: int = 200_000, seed: int = 0,
                 max_iter: int = 100, tol: float = 1e-5) -> Codebook:
    patches = extract_patches(mel_logs, w)
    if patches.shape[0] == 0:
        raise ValueError("no patches to learn from")
    rng = np.random.default_rng(seed)
    order = rng.permutation(patches.shape[0])[:max_patches]
    sample = patches[np.sort(order)]
    mean, whitener = fit_whitener(sample, variance_keep)
    Z = (sample - mean) @ whitener.T
    M_eff = M
    if M > Z.shape[0]:
        raise ValueError(f"codebook size {M} exceeds patch count {Z.shape[0]}")
    centroids = spherical_kmeans(Z, M_eff, seed=seed + 1, max_iter=max_iter, tol=tol)
    logger.debug("codebook: %d patches, d=%d, M=%d", sample.shape[0], whitener.shape[0], M_eff)
    return Codebook(mean, whitener, centroids, w)


def project(mel_log: MelSpectrogram | np.ndarray, cb: Codebook) -> np.ndarray:
    frames = mel_log.frames if isinstance(mel_log, MelSpectrogram) else np.asarray(mel_log)
    if frames.shape[0] < cb.patch_width:
        raise ValueError(f"clip has {frames.shape[0]} frames, patch width is {cb.patch_width}")
    Z = (_patches(frames, cb.patch_width) - cb.mean) @ cb.whitener.T
    return np.maximum(Z @ cb.centroids.T, 0.0)


def pool_clip(features: np.ndarray) -> np.ndarray:
    """Per-column mean, max and population std, concatenated."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValueError("need a non-empty 2-D feature matrix")
    return np.concatenate([F.mean(axis=0), F.max(axis=0), F.std(axis=0)])
