"""Structured foreground/background mixing.

Two plans are supported:

``stratified``
    every training foreground item is mixed with one background clip of
    each *other* individual (training-time decorrelation).
``adversarial``
    every evaluation foreground item is mixed with one background clip of a
    single randomly chosen other individual (evaluation-time probe).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import AudioClip, ClipRecord, DatasetError, SampleRateMismatch, load_audio

DEFAULT_GAIN = 0.5
PLAN_COLUMNS = ("fg_path", "bg_path", "label", "kind", "seed")


class MixError(DatasetError):
    """Failure while realizing one entry of a mix plan."""


class MixKind(str, enum.Enum):
    STRATIFIED = "stratified"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class MixEntry:
    foreground: ClipRecord
    background: ClipRecord

    @property
    def label(self) -> str:
        return self.foreground.individual


@dataclass(frozen=True)
class MixPlan:
    entries: tuple[MixEntry, ...]
    kind: MixKind
    seed: int

    def __len__(self):
        return len(self.entries)

    def write_csv(self, path_or_file) -> None:
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLAN_COLUMNS)
        for e in self.entries:
            writer.writerow([Path(e.foreground.path).as_posix(), Path(e.background.path).as_posix(),
                             e.label, self.kind.value, self.seed])


def mix_clips(fg: AudioClip, bg: AudioClip, gain: float = DEFAULT_GAIN,
              return_clamped: bool = False):
    """``gain*fg + gain*bg`` at the foreground's length.

    A shorter background is looped from its start; a longer one is cut.
    The result is clamped to [-1, 1]; ``return_clamped`` also returns how
    many samples needed clamping.
    """
    if fg.sample_rate != bg.sample_rate:
        raise SampleRateMismatch(f"cannot mix {fg.sample_rate} Hz with {bg.sample_rate} Hz")
    n = fg.samples.size
    reps = -(-n // bg.samples.size)
    bg_samples = np.tile(bg.samples, reps)[:n] if reps > 1 else bg.samples[:n]
    raw = gain * fg.samples + gain * bg_samples
    out = np.clip(raw, -1.0, 1.0)
    clip = AudioClip(out, fg.sample_rate, f"{fg.clip_id}+{bg.clip_id}")
    if return_clamped:
        return clip, int(np.count_nonzero(out != raw))
    return clip


def _by_individual(records: Sequence[ClipRecord]) -> dict[str, list[ClipRecord]]:
    out: dict[str, list[ClipRecord]] = {}
    for r in records:
        out.setdefault(r.individual, []).append(r)
    return out


def plan_stratified(train_fg: Sequence[ClipRecord], train_bg: Sequence[ClipRecord],
                    seed: int = 0) -> MixPlan:
    """One mixture per (foreground item, other individual) pair.

    Individuals are taken from ``train_fg``; each needs at least one clip in
    ``train_bg``.  Background choice within an individual is uniform.
    """
    individuals = sorted({r.individual for r in train_fg})
    bgs = _by_individual(train_bg)
    lacking = [i for i in individuals if not bgs.get(i)]
    if lacking:
        raise DatasetError(f"no background clips for individual(s): {', '.join(lacking)}")
    rng = np.random.default_rng(seed)
    entries = []
    for fg in train_fg:
        for other in individuals:
            if other == fg.individual:
                continue
            pool = bgs[other]
            entries.append(MixEntry(fg, pool[int(rng.integers(len(pool)))]))
    return MixPlan(tuple(entries), MixKind.STRATIFIED, seed)


def plan_adversarial(eval_fg: Sequence[ClipRecord], eval_bg: Sequence[ClipRecord],
                     seed: int = 0) -> MixPlan:
    """Pair each evaluation foreground item with one background of a
    uniformly chosen different individual.  Background reuse is allowed."""
    bgs = _by_individual(eval_bg)
    owners = sorted(i for i, v in bgs.items() if v)
    if len(owners) < 2:
        raise DatasetError(f"adversarial mixing needs backgrounds from >= 2 individuals, got {len(owners)}")
    rng = np.random.default_rng(seed)
    entries = []
    for fg in eval_fg:
        others = [i for i in owners if i != fg.individual]
        if not others:
            raise DatasetError(f"{fg.path}: no background from another individual available")
        who = others[int(rng.integers(len(others)))]
        pool = bgs[who]
        entries.append(MixEntry(fg, pool[int(rng.integers(len(pool)))]))
    return MixPlan(tuple(entries), MixKind.ADVERSARIAL, seed)


def realize_plan(plan: MixPlan, gain: float = DEFAULT_GAIN,
                 loader: Callable[[ClipRecord], AudioClip] = load_audio) -> list[tuple[AudioClip, str]]:
    out = []
    for k, e in enumerate(plan.entries):
        assert e.foreground.individual != e.background.individual, \
            f"plan entry {k} mixes {e.label} with its own background"
        try:
            fg = loader(e.foreground)
            bg = loader(e.background)
        except Exception as exc:
            raise MixError(f"plan entry {k} ({e.foreground.path} + {e.background.path}): {exc}") from exc
        out.append((mix_clips(fg, bg, gain), e.label))
    return out


def stratified_training_set(train_fg: Sequence[ClipRecord], plan: MixPlan,
                            include_originals: bool = True) -> list:
    """Training items as a flat list: records (originals) then mix entries."""
    items: list = list(train_fg) if include_originals else []
    items.extend(plan.entries)
    return items
