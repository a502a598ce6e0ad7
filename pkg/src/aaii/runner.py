"""Experiment configuration and execution.

A run takes a YAML config, executes each scenario (split, optional
stratified augmentation, optional explicit-background class, mel or learned
features, forest training, then one or more evaluation modes) and writes::

    <output_dir>/
        reports/<scenario>__<mode>.json
        probabilities/<scenario>__<mode>.csv
        artifacts/codebook-<sha>.json, model-<sha>.json
        plans/<scenario>__<kind>.csv
        summary.json
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import re
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import dsp
from .augment import DEFAULT_GAIN, MixEntry, MixPlan, plan_adversarial, plan_stratified
from .dataset import (DatasetError, DatasetManifest, ScenarioSpec, Split, load_manifest,
                      probe_sample_rate, split_scenario)
from .evaluation import background_only_diagnostic, binary_auc, macro_auc, rmse_shift
from .featlearn import Codebook
from .forest import BACKGROUND_LABEL, ForestModel, ForestParams, derive_seed, predict_proba, train_forest
from .pipeline import FeatLearnParams, FeatureExtractor, item_label, item_name

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "aaii-report/1"
SUMMARY_SCHEMA = "aaii-summary/1"

# seed streams under a scenario seed
_STREAM_STRATIFIED, _STREAM_ADVERSARIAL, _STREAM_CODEBOOK, _STREAM_FOREST = 1, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    manifest: Path
    scenarios: list[ScenarioSpec]
    output_dir: Path = Path("aaii-out")
    seed: int = 0
    log_eps: float = dsp.LOG_EPS
    featlearn: FeatLearnParams = field(default_factory=FeatLearnParams)
    forest: ForestParams = field(default_factory=ForestParams)
    gain: float = DEFAULT_GAIN
    include_originals: bool = True
    cache_dir: Path | None = None
    dump_mel_dir: Path | None = None

    def __post_init__(self):
        names = [s.name for s in self.scenarios]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate scenario names: {', '.join(dupes)}")
        if not self.scenarios:
            raise ConfigError("no scenarios configured")
        if not 0 < self.gain <= 1:
            raise ConfigError("gain must be in (0, 1]")

    def validate_paths(self) -> None:
        if not Path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")

    def settings(self) -> dict:
        """Every pipeline setting, including the fixed front-end choices."""
        return {
            "dsp": {
                "frame_length": dsp.FRAME_LENGTH,
                "hop_length": dsp.HOP_LENGTH,
                "window": "hamming (periodic)",
                "n_mels": dsp.N_MELS,
                "mel_scale": "htk: 2595*log10(1+f/700)",
                "f_min": 0.0,
                "f_max": "nyquist",
                "noise_reduction": "subtract per-band median over clip, clamp at 0",
                "log_eps": self.log_eps,
            },
            "featlearn": self.featlearn.to_dict(),
            "pooling": "mean, max, population std per column",
            "forest": {
                "n_trees": self.forest.n_trees,
                "min_leaf": self.forest.min_leaf,
                "max_features": self.forest.max_features or "ceil(sqrt(D))",
                "criterion": "gini",
                "tie_break": "lowest feature index, then lowest threshold",
                "voting": "mean of normalized leaf histograms",
            },
            "augment": {"gain": self.gain, "include_originals": self.include_originals,
                        "background_length": "loop to foreground length"},
            "auc": {"multiclass": "one-vs-rest unweighted macro mean", "ties": 0.5},
            "rmse": "over all cells of the probability matrix",
        }

    @classmethod
    def from_yaml(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if overrides:
            data.update(overrides)
        return cls.from_dict(data, base=path.parent)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        data = copy.deepcopy(data)
        base = Path(base) if base is not None else Path.cwd()

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        known = {"manifest", "scenarios", "output_dir", "seed", "dsp", "featlearn", "forest",
                 "augment", "cache_dir", "dump_mel_dir"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(extra))}")
        if "manifest" not in data:
            raise ConfigError("config needs a 'manifest' entry")
        seed = int(data.get("seed", 0))
        dsp_cfg = data.get("dsp") or {}
        aug_cfg = data.get("augment") or {}
        forest_cfg = dict(data.get("forest") or {})
        forest_cfg.pop("seed", None)
        try:
            featlearn = FeatLearnParams(**(data.get("featlearn") or {}))
            forest = ForestParams(**forest_cfg)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        scenarios = []
        for raw in data.get("scenarios") or []:
            scenarios.extend(_expand_scenario(raw, seed))
        return cls(
            manifest=resolve(data["manifest"]),
            scenarios=scenarios,
            output_dir=resolve(data.get("output_dir", "aaii-out")),
            seed=seed,
            log_eps=float(dsp_cfg.get("log_eps", dsp.LOG_EPS)),
            featlearn=featlearn,
            forest=forest,
            gain=float(aug_cfg.get("gain", DEFAULT_GAIN)),
            include_originals=bool(aug_cfg.get("include_originals", True)),
            cache_dir=resolve(data.get("cache_dir")),
            dump_mel_dir=resolve(data.get("dump_mel_dir")),
        )


_FLAG_ABBREV = {
    "use_stratified_augmentation": "aug",
    "use_feature_learning": "learned",
    "use_explicit_background": "exbg",
    "adversarial_eval": "adv",
    "background_only_eval": "bgonly",
}


def _expand_scenario(raw: dict, default_seed: int) -> list[ScenarioSpec]:
    """A scenario entry, or a ``grid`` of them: ``grid`` maps ScenarioSpec
    fields to value lists and expands to their cartesian product."""
    raw = dict(raw)
    grid = raw.pop("grid", None) or {}
    raw.setdefault("seed", default_seed)
    valid = {f.name for f in fields(ScenarioSpec)}
    for key in list(raw) + list(grid):
        if key not in valid:
            raise ConfigError(f"scenario {raw.get('name')!r}: unknown field {key!r}")
    keys = list(grid)
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        spec = dict(raw)
        suffix = []
        for k, v in zip(keys, values):
            spec[k] = v
            if isinstance(v, bool):
                suffix.append(_FLAG_ABBREV.get(k, k) + ("+" if v else "-"))
            else:
                suffix.append(f"{k}={v}")
        if suffix:
            spec["name"] = f"{raw['name']}[{','.join(suffix)}]"
        try:
            out.append(ScenarioSpec(**spec))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {spec.get('name')!r}: {exc}") from None
    return out


def fingerprint(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._+=-]+", "_", name)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class ScenarioResult:
    name: str
    reports: list[dict] = field(default_factory=list)
    error: str | None = None


class Runner:
    """Executes scenarios against one manifest, sharing caches between them."""

    def __init__(self, config: ExperimentConfig, manifest: DatasetManifest | None = None):
        self.config = config
        self.manifest = manifest or load_manifest(config.manifest)
        if BACKGROUND_LABEL in self.manifest.individuals:
            raise DatasetError(f"individual label {BACKGROUND_LABEL!r} is reserved")
        rate = probe_sample_rate(self.manifest.records[0])
        self.extractor = FeatureExtractor(rate, config.gain, config.log_eps,
                                          config.cache_dir, config.dump_mel_dir)
        self._codebooks: dict[str, Codebook] = {}
        self._models: dict[str, ForestModel] = {}
        self.out = Path(config.output_dir)

    # -- artifacts ----------------------------------------------------------

    def _write(self, rel: str, text: str) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return path

    def codebook(self, items, seed: int) -> Codebook:
        key = fingerprint([[self.extractor.item_key(i) for i in items],
                           self.config.featlearn.to_dict(), seed, self.config.log_eps])
        if key not in self._codebooks:
            cb = self.extractor.learn_codebook(items, self.config.featlearn, seed)
            self._codebooks[key] = cb
            self._write(f"artifacts/codebook-{cb.digest()[:16]}.json", cb.to_json())
        return self._codebooks[key]

    def model(self, X: np.ndarray, labels: list[str], params: ForestParams) -> ForestModel:
        key = fingerprint([hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest(),
                           list(X.shape), labels, params.to_dict()])
        if key not in self._models:
            m = train_forest(X, labels, params)
            self._models[key] = m
            self._write(f"artifacts/model-{m.digest()[:16]}.json", m.to_json())
        return self._models[key]

    # -- scenario -----------------------------------------------------------

    def training_items(self, split: Split, spec: ScenarioSpec):
        """(foreground training items, full training items, labels, stratified plan)."""
        train_fg = split.train_fg()
        plan = None
        fg_items: list = list(train_fg)
        if spec.use_stratified_augmentation:
            plan = plan_stratified(train_fg, split.train_bg(),
                                   derive_seed(spec.seed, _STREAM_STRATIFIED))
            fg_items = (list(train_fg) if self.config.include_originals else []) + list(plan.entries)
        items = list(fg_items)
        labels = [item_label(i) for i in items]
        if spec.use_explicit_background:
            bg = split.train_bg()
            items += bg
            labels += [BACKGROUND_LABEL] * len(bg)
        return fg_items, items, labels, plan

    def run_scenario(self, spec: ScenarioSpec) -> list[dict]:
        cfg = self.config
        ex = self.extractor
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            split = split_scenario(self.manifest, spec)
        split_warnings = [str(w.message) for w in caught]

        fg_items, train_items, train_labels, strat_plan = self.training_items(split, spec)
        if strat_plan is not None:
            self._write_plan(spec, strat_plan)

        codebook = None
        if spec.use_feature_learning:
            codebook = self.codebook(fg_items, derive_seed(spec.seed, _STREAM_CODEBOOK))
        X_train = ex.features(train_items, codebook)
        params = replace(cfg.forest, seed=derive_seed(spec.seed, _STREAM_FOREST))
        model = self.model(X_train, train_labels, params)

        eval_fg, eval_bg = split.eval_fg(), split.eval_bg()
        if not eval_fg:
            raise DatasetError(f"scenario {spec.name!r}: no foreground evaluation items")
        settings = cfg.settings()
        common = {
            "schema": REPORT_SCHEMA,
            "scenario": spec.to_dict(),
            "feature_kind": "learned" if codebook is not None else "mel",
            "feature_dim": int(X_train.shape[1]),
            "classes": list(model.classes),
            "n_train": len(train_items),
            "n_train_foreground_original": len(split.train_fg()),
            "excluded_individuals": sorted(split.excluded),
            "warnings": split_warnings,
            "artifacts": {
                "codebook": codebook.digest() if codebook is not None else None,
                "model": model.digest(),
            },
            "settings": settings,
            "config_fingerprint": fingerprint([settings, spec.to_dict()]),
        }

        reports = []
        X_plain = ex.features(eval_fg, codebook)
        P_plain = predict_proba(model, X_plain)
        truth = [r.individual for r in eval_fg]
        detection = None
        if spec.use_explicit_background and eval_bg:
            X_bg = ex.features(eval_bg, codebook)
            scores = 1.0 - predict_proba(model, np.vstack([X_plain, X_bg]))[
                :, model.classes.index(BACKGROUND_LABEL)]
            detection = binary_auc(scores, [True] * len(eval_fg) + [False] * len(eval_bg))
        reports.append(self._report(common, spec, "plain", eval_fg, truth, P_plain, model,
                                    detection_auc=detection))

        if spec.adversarial_eval:
            plan = plan_adversarial(eval_fg, eval_bg, derive_seed(spec.seed, _STREAM_ADVERSARIAL))
            self._write_plan(spec, plan)
            P_adv = predict_proba(model, ex.features(plan.entries, codebook))
            reports.append(self._report(common, spec, "adversarial", plan.entries,
                                        [e.label for e in plan.entries], P_adv, model,
                                        rmse=rmse_shift(P_adv, P_plain)))

        if spec.background_only_eval:
            if not eval_bg:
                raise DatasetError(f"scenario {spec.name!r}: no background evaluation items")
            owners = [r.individual for r in eval_bg]
            _, _, _, P_bg = background_only_diagnostic(model, ex.features(eval_bg, codebook), owners)
            reports.append(self._report(common, spec, "background_only", eval_bg, owners, P_bg, model))
        return reports

    def _write_plan(self, spec: ScenarioSpec, plan: MixPlan) -> None:
        path = self.out / "plans" / f"{_slug(spec.name)}__{plan.kind.value}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        plan.write_csv(path)

    def _report(self, common: dict, spec: ScenarioSpec, mode: str, items, truth, P, model,
                detection_auc=None, rmse=None) -> dict:
        per_class, macro, skipped = macro_auc(P, truth, model.classes)
        stem = f"{_slug(spec.name)}__{mode}"
        prob_rel = f"probabilities/{stem}.csv"
        self._write_probabilities(prob_rel, items, truth, P, model.classes)
        report = dict(common)
        report.update({
            "eval_mode": mode,
            "n_eval": len(truth),
            "per_class_auc": per_class,
            "macro_auc": macro,
            "skipped_classes": skipped,
            "detection_auc": detection_auc,
            "rmse_shift": rmse,
            "probabilities_csv": prob_rel,
        })
        self._write(f"reports/{stem}.json", _dumps(report))
        return report

    def _write_probabilities(self, rel, items, truth, P, classes) -> None:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip", "truth", *classes])
            for item, t, row in zip(items, truth, P):
                w.writerow([item_name(item), t, *(repr(float(v)) for v in row)])

    def run(self) -> list[ScenarioResult]:
        results = []
        for spec in self.config.scenarios:
            logger.info("scenario %s", spec.name)
            try:
                results.append(ScenarioResult(spec.name, self.run_scenario(spec)))
            except Exception as exc:  # isolate failures per scenario
                logger.error("scenario %s failed: %s", spec.name, exc)
                results.append(ScenarioResult(spec.name, error=f"{type(exc).__name__}: {exc}"))
        summary = {
            "schema": SUMMARY_SCHEMA,
            "manifest": str(self.config.manifest),
            "scenarios": [
                {"name": r.name, "status": "error" if r.error else "ok", "error": r.error,
                 "reports": [f"reports/{_slug(r.name)}__{rep['eval_mode']}.json" for rep in r.reports]}
                for r in results
            ],
            "clamped_mix_samples": self.extractor.clamped_samples,
        }
        self._write("summary.json", _dumps(summary))
        return results


def run_experiment(config: ExperimentConfig, manifest: DatasetManifest | None = None) -> list[dict]:
    """Run every scenario; returns all reports (failed scenarios contribute none)."""
    results = Runner(config, manifest).run()
    return [rep for r in results for rep in r.reports]


def load_reports(out_dir) -> list[dict]:
    paths = sorted((Path(out_dir) / "reports").glob("*.json"))
    return [json.loads(p.read_text()) for p in paths]
