"""Automatic acoustic identification of individual animals, with
structured foreground/background augmentation and confound diagnostics."""

__version__ = "0.1.0"

from .augment import MixPlan, mix_clips, plan_adversarial, plan_stratified, realize_plan
from .dataset import (AudioClip, ClipRecord, DatasetManifest, Role, ScenarioSpec, SplitRule,
                      load_audio, load_manifest, split_scenario)
from .evaluation import background_only_diagnostic, binary_auc, macro_auc, rmse_shift
from .forest import ForestModel, ForestParams, predict_detection, predict_proba, train_forest
from .runner import ExperimentConfig, run_experiment
from .synthgen import SynthSpec, generate

__all__ = [
    "AudioClip", "ClipRecord", "DatasetManifest", "ExperimentConfig", "ForestModel",
    "ForestParams", "MixPlan", "Role", "ScenarioSpec", "SplitRule", "SynthSpec",
    "background_only_diagnostic", "binary_auc", "generate", "load_audio", "load_manifest",
    "macro_auc", "mix_clips", "plan_adversarial", "plan_stratified", "predict_detection",
    "predict_proba", "realize_plan", "rmse_shift", "run_experiment", "split_scenario",
    "train_forest",
]
