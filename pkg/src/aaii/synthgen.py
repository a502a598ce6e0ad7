"""Synthetic foreground/background datasets with a planted confound.

Each individual gets

* a vocal signature: tone pulses with an individual fundamental frequency
  and repetition rate.  ``signature_strength`` scales how far individuals
  sit from a shared centre (0 means everyone sounds the same);
* a background signature: a slowly fluctuating band of noise at an
  individual centre frequency, on top of wideband noise common to all.
  ``confound_strength`` scales the spread of the band centres.

Background clips hold the background process only; foreground clips add
vocal pulses to a fresh draw of the same individual's background.  Half of
each individual's clips are dated in a first year and half in the next,
where the background band drifts upward slightly.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .dataset import ClipRecord, DatasetManifest, Role, write_manifest, write_wav
from .forest import derive_seed

PEAK_LIMIT = 0.9
FIRST_YEAR = 2013

# shared centres and half-ranges of the per-individual parameters
F0_CENTRE, F0_SPREAD = 2600.0, 1400.0
RATE_CENTRE, RATE_SPREAD = 5.0, 2.5
BAND_CENTRE, BAND_SPREAD = 4500.0, 3800.0
BAND_WIDTH_OCT = 0.35
YEAR2_DRIFT = 1.04

PULSE_S = 0.06
PULSE_AMP = 0.22
BAND_RMS = 0.06
WIDEBAND_RMS = 0.012


@dataclass(frozen=True)
class SynthSpec:
    K: int = 5
    clips_per_individual: int = 20
    duration_s: float = 2.0
    sample_rate: int = 44100
    confound_strength: float = 1.0
    signature_strength: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.clips_per_individual < 1:
            raise ValueError("clips_per_individual must be >= 1")
        if self.duration_s < 1.0:
            raise ValueError("duration_s must be >= 1 s")
        for name in ("confound_strength", "signature_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @classmethod
    def from_yaml(cls, path) -> "SynthSpec":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if "synth" in data:
            data = data["synth"]
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def _spread(K: int, rng: np.random.Generator) -> np.ndarray:
    """K evenly spaced offsets in [-1, 1] in a seeded random order."""
    return rng.permutation(np.linspace(-1.0, 1.0, K))


@dataclass(frozen=True)
class _Individual:
    name: str
    f0: float
    rate: float
    band_centre: float


def _individuals(spec: SynthSpec) -> list[_Individual]:
    rng = np.random.default_rng(derive_seed(spec.seed, 0))
    f0_off = _spread(spec.K, rng)
    rate_off = _spread(spec.K, rng)
    band_off = _spread(spec.K, rng)
    width = len(str(spec.K))
    out = []
    for i in range(spec.K):
        out.append(_Individual(
            name=f"ind{i + 1:0{width}d}",
            f0=F0_CENTRE + spec.signature_strength * F0_SPREAD * f0_off[i],
            rate=RATE_CENTRE + spec.signature_strength * RATE_SPREAD * rate_off[i],
            band_centre=BAND_CENTRE + spec.confound_strength * BAND_SPREAD * band_off[i],
        ))
    return out


def _band_noise(n: int, sr: int, centre: float, rng: np.random.Generator) -> np.ndarray:
    lo = centre * 2 ** (-BAND_WIDTH_OCT / 2)
    hi = min(centre * 2 ** (BAND_WIDTH_OCT / 2), 0.45 * sr)
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    x /= np.sqrt(np.mean(x ** 2)) + 1e-12
    # slow random envelope (roughly 1-4 Hz) so the band is not stationary
    k = max(2, int(3 * n / sr))
    knots = rng.uniform(0.2, 1.8, size=k + 1)
    env = np.interp(np.linspace(0, k, n), np.arange(k + 1), knots)
    return x * env


def _pulses(n: int, sr: int, ind: _Individual, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = ind.f0 * (1.0 + 0.015 * rng.standard_normal())
    rate = ind.rate * (1.0 + 0.03 * rng.standard_normal())
    period = 1.0 / rate
    plen = int(PULSE_S * sr)
    env = np.hanning(plen)
    out = np.zeros(n)
    start = rng.uniform(0.0, period)
    amp = PULSE_AMP * rng.uniform(0.7, 1.0)
    while start * sr + plen < n:
        i0 = int(start * sr)
        tt = t[i0:i0 + plen]
        phase = rng.uniform(0, 2 * np.pi)
        tone = np.sin(2 * np.pi * f0 * tt + phase) + 0.35 * np.sin(4 * np.pi * f0 * tt + phase)
        out[i0:i0 + plen] += amp * env * tone / 1.35
        start += period
    return out


def synth_clip(spec: SynthSpec, ind: _Individual, role: Role, year_index: int,
               rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.duration_s * spec.sample_rate))
    sr = spec.sample_rate
    centre = ind.band_centre * (YEAR2_DRIFT if year_index else 1.0)
    x = BAND_RMS * _band_noise(n, sr, centre, rng)
    x += WIDEBAND_RMS * rng.standard_normal(n)
    if role is Role.FOREGROUND:
        x += _pulses(n, sr, ind, rng)
    return np.clip(x, -PEAK_LIMIT, PEAK_LIMIT)


def generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write WAV files plus ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = spec.clips_per_individual
    first_half = (n + 1) // 2
    records = []
    stream = 1
    for ind in _individuals(spec):
        (out_dir / ind.name).mkdir(exist_ok=True)
        for role in (Role.FOREGROUND, Role.BACKGROUND):
            for k in range(n):
                year_index = 0 if k < first_half else 1
                day = k if year_index == 0 else k - first_half
                date = dt.date(FIRST_YEAR + year_index, 4, 20) + dt.timedelta(days=day)
                rng = np.random.default_rng(derive_seed(spec.seed, stream))
                stream += 1
                samples = synth_clip(spec, ind, role, year_index, rng)
                path = out_dir / ind.name / f"{role.value[:2]}{k:03d}.wav"
                write_wav(path, samples, spec.sample_rate)
                records.append(ClipRecord(path, ind.name, role, date,
                                          duration_s=samples.size / spec.sample_rate,
                                          sample_rate=spec.sample_rate))
    manifest = DatasetManifest(tuple(records), source=out_dir / "manifest.csv")
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
