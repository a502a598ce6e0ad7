"""Clip manifests, audio loading and temporal train/eval splitting.

A manifest is a CSV file with (at least) the columns ``path``,
``individual``, ``role`` and ``date``.  Relative paths are resolved against
the manifest's own directory.  Extra columns are ignored.

Parse rules for the ``role`` column (case-insensitive)::

    foreground, fg  -> Role.FOREGROUND
    background, bg  -> Role.BACKGROUND
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("path", "individual", "role", "date")


class DatasetError(ValueError):
    """Invalid manifest content or an impossible split."""


class AudioFormatError(DatasetError):
    """Audio file with an unsupported codec, bit depth or channel layout."""


class SampleRateMismatch(DatasetError):
    """Audio file whose sample rate differs from the rest of the run."""


class Role(str, enum.Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"

    @classmethod
    def parse(cls, text: str) -> "Role":
        key = text.strip().lower()
        aliases = {"foreground": cls.FOREGROUND, "fg": cls.FOREGROUND,
                   "background": cls.BACKGROUND, "bg": cls.BACKGROUND}
        if key not in aliases:
            raise ValueError(f"unknown role {text!r}")
        return aliases[key]


class SplitRule(str, enum.Enum):
    BY_DATE_THRESHOLD = "by_date_threshold"
    BY_YEAR = "by_year"
    EXPLICIT_LISTS = "explicit_lists"


@dataclass(frozen=True)
class ClipRecord:
    path: Path
    individual: str
    role: Role
    date: dt.date
    duration_s: float | None = None
    sample_rate: int | None = None

    def __post_init__(self):
        if not self.individual:
            raise DatasetError("individual label must be non-empty")
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role.parse(str(self.role)))
        if isinstance(self.date, str):
            object.__setattr__(self, "date", dt.date.fromisoformat(self.date))

    @property
    def is_foreground(self) -> bool:
        return self.role is Role.FOREGROUND


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ClipRecord, ...]
    source: Path | None = None

    @property
    def individuals(self) -> list[str]:
        return sorted({r.individual for r in self.records})

    @property
    def K(self) -> int:
        return len(self.individuals)

    def foreground(self) -> list[ClipRecord]:
        return [r for r in self.records if r.role is Role.FOREGROUND]

    def background(self) -> list[ClipRecord]:
        return [r for r in self.records if r.role is Role.BACKGROUND]

    def summary(self) -> str:
        n_fg = len(self.foreground())
        n_bg = len(self.background())
        return f"K={self.K} individuals, {n_fg} foreground clips, {n_bg} background clips"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DatasetError(f"clip {self.clip_id!r}: samples must be a non-empty 1-D array")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ScenarioSpec:
    """One training/evaluation configuration.

    Split parameters depend on ``split_rule``:

    * ``by_date_threshold``: records dated before ``threshold`` train,
      the rest evaluate.
    * ``by_year``: ``train_years`` train, ``eval_years`` evaluate.  When
      omitted, the earliest year trains and all later years evaluate.
    * ``explicit_lists``: ``train_paths`` / ``eval_paths``; paths are
      compared after resolution, records in neither list are dropped.

    ``on_missing`` controls individuals lacking foreground items on one side
    of the split: ``"error"`` aborts, ``"exclude"`` drops that individual
    from both sides.
    """

    name: str
    split_rule: SplitRule = SplitRule.BY_YEAR
    threshold: dt.date | None = None
    train_years: tuple[int, ...] = ()
    eval_years: tuple[int, ...] = ()
    train_paths: tuple[str, ...] = ()
    eval_paths: tuple[str, ...] = ()
    train_limit_per_individual: int | None = None
    use_explicit_background: bool = False
    use_stratified_augmentation: bool = False
    use_feature_learning: bool = False
    adversarial_eval: bool = False
    background_only_eval: bool = False
    on_missing: str = "error"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split_rule", SplitRule(self.split_rule))
        if isinstance(self.threshold, str):
            object.__setattr__(self, "threshold", dt.date.fromisoformat(self.threshold))
        for name in ("train_years", "eval_years", "train_paths", "eval_paths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.name:
            raise DatasetError("scenario name must be non-empty")
        if self.train_limit_per_individual is not None and self.train_limit_per_individual < 1:
            raise DatasetError("train_limit_per_individual must be >= 1")
        if self.seed < 0:
            raise DatasetError("seed must be unsigned")
        if self.on_missing not in ("error", "exclude"):
            raise DatasetError(f"on_missing must be 'error' or 'exclude', got {self.on_missing!r}")
        if self.split_rule is SplitRule.BY_DATE_THRESHOLD and self.threshold is None:
            raise DatasetError(f"scenario {self.name!r}: by_date_threshold needs a threshold date")
        if self.split_rule is SplitRule.EXPLICIT_LISTS and not (self.train_paths and self.eval_paths):
            raise DatasetError(f"scenario {self.name!r}: explicit_lists needs train_paths and eval_paths")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "split_rule": self.split_rule.value,
            "threshold": self.threshold.isoformat() if self.threshold else None,
            "train_years": list(self.train_years),
            "eval_years": list(self.eval_years),
            "train_paths": list(self.train_paths),
            "eval_paths": list(self.eval_paths),
            "train_limit_per_individual": self.train_limit_per_individual,
            "use_explicit_background": self.use_explicit_background,
            "use_stratified_augmentation": self.use_stratified_augmentation,
            "use_feature_learning": self.use_feature_learning,
            "adversarial_eval": self.adversarial_eval,
            "background_only_eval": self.background_only_eval,
            "on_missing": self.on_missing,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# manifest I/O


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DatasetError(f"{path}: row 1 (header): missing column(s) {', '.join(missing)}")
        records = []
        # row numbers count the header as row 1
        for rowno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            try:
                role = Role.parse(row["role"])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {rowno}: {exc}") from None
            try:
                date = dt.date.fromisoformat(row["date"])
            except ValueError:
                raise DatasetError(f"{path}: row {rowno}: unparseable date {row['date']!r}") from None
            if not row["individual"]:
                raise DatasetError(f"{path}: row {rowno}: empty individual label")
            if not row["path"]:
                raise DatasetError(f"{path}: row {rowno}: empty path")
            clip_path = Path(row["path"])
            if not clip_path.is_absolute():
                clip_path = base / clip_path
            records.append(ClipRecord(clip_path, row["individual"], role, date))
    if not records:
        raise DatasetError(f"{path}: empty manifest")
    return DatasetManifest(tuple(records), source=path)


def write_manifest(manifest: DatasetManifest | Iterable[ClipRecord], path, relative_to=None) -> None:
    """Write records back out in the four-column format."""
    records = manifest.records if isinstance(manifest, DatasetManifest) else list(manifest)
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        for r in records:
            try:
                p = Path(r.path).relative_to(base)
            except ValueError:
                p = Path(r.path)
            writer.writerow([p.as_posix(), r.individual, r.role.value, r.date.isoformat()])


# ---------------------------------------------------------------------------
# audio


def read_wav(path, clip_id: str | None = None) -> AudioClip:
    """Read a 16-bit PCM or 32-bit float WAV file as a mono clip in [-1, 1]."""
    path = Path(path)
    clip_id = str(path) if clip_id is None else clip_id
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: cannot decode WAV ({exc})") from None
    if data.ndim == 2:
        if data.shape[1] not in (1, 2):
            raise AudioFormatError(f"{path}: {data.shape[1]} channels unsupported (mono or stereo only)")
    elif data.ndim != 1:
        raise AudioFormatError(f"{path}: unexpected sample layout")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype} "
                               "(need 16-bit PCM or 32-bit float)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioFormatError(f"{path}: no samples")
    return AudioClip(np.ascontiguousarray(samples), int(rate), clip_id)


def write_wav(path, clip: AudioClip | np.ndarray, sample_rate: int | None = None,
              float32: bool = False) -> None:
    """Write mono samples in [-1, 1] as 16-bit PCM (default) or 32-bit float."""
    if isinstance(clip, AudioClip):
        samples, sample_rate = clip.samples, clip.sample_rate
    else:
        samples = np.asarray(clip, dtype=np.float64)
    if sample_rate is None:
        raise ValueError("sample_rate required for raw sample arrays")
    if float32:
        data = samples.astype(np.float32)
    else:
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), int(sample_rate), data)


def load_audio(record: ClipRecord, expected_rate: int | None = None) -> AudioClip:
    clip = read_wav(record.path, clip_id=str(record.path))
    if expected_rate is not None and clip.sample_rate != expected_rate:
        raise SampleRateMismatch(
            f"{record.path}: sample rate {clip.sample_rate} Hz differs from run rate {expected_rate} Hz")
    return clip


def probe_sample_rate(record: ClipRecord) -> int:
    return read_wav(record.path).sample_rate


def with_audio_info(record: ClipRecord, clip: AudioClip) -> ClipRecord:
    return replace(record, duration_s=clip.duration_s, sample_rate=clip.sample_rate)


# ---------------------------------------------------------------------------
# splitting


@dataclass
class Split:
    train: list[ClipRecord]
    eval: list[ClipRecord]
    excluded: set[str] = field(default_factory=set)

    def __iter__(self):
        # allows ``train, eval = split_scenario(...)``
        return iter((self.train, self.eval))

    def train_fg(self):
        return [r for r in self.train if r.is_foreground]

    def train_bg(self):
        return [r for r in self.train if not r.is_foreground]

    def eval_fg(self):
        return [r for r in self.eval if r.is_foreground]

    def eval_bg(self):
        return [r for r in self.eval if not r.is_foreground]


def _side(record: ClipRecord, spec: ScenarioSpec, first_year: int,
          train_paths: set, eval_paths: set) -> str | None:
    rule = spec.split_rule
    if rule is SplitRule.BY_DATE_THRESHOLD:
        return "train" if record.date < spec.threshold else "eval"
    if rule is SplitRule.BY_YEAR:
        year = record.date.year
        train_years = spec.train_years or (first_year,)
        if year in train_years:
            return "train"
        if spec.eval_years:
            return "eval" if year in spec.eval_years else None
        return "eval" if year > max(train_years) else None
    key = str(Path(record.path).resolve())
    if key in train_paths:
        return "train"
    if key in eval_paths:
        return "eval"
    return None


def _resolve_paths(paths: Sequence[str], base: Path | None) -> set[str]:
    out = set()
    for p in paths:
        p = Path(p)
        if not p.is_absolute() and base is not None:
            p = base / p
        out.add(str(p.resolve()))
    return out


def unmatched_individuals(train: Sequence[ClipRecord], eval_: Sequence[ClipRecord]) -> set[str]:
    """Individuals with foreground items on only one side of a split."""
    tr = {r.individual for r in train if r.is_foreground}
    ev = {r.individual for r in eval_ if r.is_foreground}
    return tr ^ ev


def _truncate(records: list[ClipRecord], limit: int) -> list[ClipRecord]:
    kept_ids = set()
    by_ind: dict[tuple[str, Role], list[tuple[dt.date, int]]] = {}
    for i, r in enumerate(records):
        by_ind.setdefault((r.individual, r.role), []).append((r.date, i))
    for items in by_ind.values():
        # earliest first; file order breaks date ties
        items.sort()
        kept_ids.update(i for _, i in items[:limit])
    return [r for i, r in enumerate(records) if i in kept_ids]


def split_scenario(manifest: DatasetManifest, spec: ScenarioSpec) -> Split:
    """Partition ``manifest`` through time according to ``spec``.

    Returns a :class:`Split`, which also unpacks as ``(train, eval)``.
    Both roles follow the same rule.  With a per-individual training limit
    the earliest-dated items of each individual and role are kept.
    """
    base = manifest.source.parent if manifest.source is not None else None
    train_paths = _resolve_paths(spec.train_paths, base)
    eval_paths = _resolve_paths(spec.eval_paths, base)
    overlap = train_paths & eval_paths
    if overlap:
        raise DatasetError(f"scenario {spec.name!r}: {len(overlap)} path(s) in both train and eval lists")
    first_year = min(r.date.year for r in manifest.records)

    train, eval_ = [], []
    for r in manifest.records:
        side = _side(r, spec, first_year, train_paths, eval_paths)
        if side == "train":
            train.append(r)
        elif side == "eval":
            eval_.append(r)

    if spec.train_limit_per_individual is not None:
        train = _truncate(train, spec.train_limit_per_individual)

    missing = unmatched_individuals(train, eval_)
    if missing:
        names = ", ".join(sorted(missing))
        if spec.on_missing == "error":
            raise DatasetError(
                f"scenario {spec.name!r}: individual(s) without foreground items on both sides of the split: {names}")
        warnings.warn(f"scenario {spec.name!r}: excluding individual(s) {names}", stacklevel=2)
        train = [r for r in train if r.individual not in missing]
        eval_ = [r for r in eval_ if r.individual not in missing]

    n_ind = len({r.individual for r in train if r.is_foreground})
    if n_ind < 2:
        raise DatasetError(f"scenario {spec.name!r}: need >= 2 individuals in training, got {n_ind}")
    logger.debug("scenario %s: %d train / %d eval records", spec.name, len(train), len(eval_))
    return Split(train, eval_, missing)
