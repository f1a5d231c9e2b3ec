"""Synthetic data, training, multi-arm experiments and the command line."""
from .data import Dataset, SyntheticTaskConfig, Utterance, gen_synthetic, load_dataset, save_dataset
from .experiment import ArmConfig, ExperimentConfig, ExperimentResult, run_experiment
from .train import Adam, TrainConfig, TrainingDiverged, train

__all__ = [
    "Dataset", "SyntheticTaskConfig", "Utterance", "gen_synthetic", "load_dataset", "save_dataset",
    "ArmConfig", "ExperimentConfig", "ExperimentResult", "run_experiment",
    "Adam", "TrainConfig", "TrainingDiverged", "train",
]
