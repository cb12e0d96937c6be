"""Adversarial and temporal-shift robustness of micro-Doppler activity classifiers."""
from .adversary import AdversarialSet, AttackConfig, generate_adversarial_dataset, pgd_attack, transfer_evaluate
from .dataset import (CLASS_NAMES, LabeledSample, SplitSpec, build_synthetic_dataset, load_class_config,
                      load_dataset, stratified_split)
from .estimators import MicroDopplerClassifier, RepresentationTransformer
from .evaluation import RobustnessReport, accuracy, doppler_sweep, temporal_sweep, worst_case_temporal_accuracy
from .models import ModelConfig, build_model
from .pipeline import ExperimentPlan, run_plan
from .training import TrainConfig, TrainingScheme, train

__version__ = "0.1.0"

__all__ = [
    "AdversarialSet", "AttackConfig", "CLASS_NAMES", "ExperimentPlan", "LabeledSample", "MicroDopplerClassifier",
    "ModelConfig", "RepresentationTransformer", "RobustnessReport", "SplitSpec", "TrainConfig", "TrainingScheme",
    "accuracy", "build_model", "build_synthetic_dataset", "doppler_sweep", "generate_adversarial_dataset",
    "load_class_config", "load_dataset", "pgd_attack", "run_plan", "stratified_split", "temporal_sweep", "train",
    "transfer_evaluate", "worst_case_temporal_accuracy",
]
