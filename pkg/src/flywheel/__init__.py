"""Two coupled EM cycles for learning with noisy labels.

The main cycle separates clean from corrupted samples; the auxiliary cycle
refurbishes corrupted labels and estimates how labels get corrupted.
"""
from .core import (ClassDistribution, CorruptionMatrix, DegenerateDistribution,
                   MixtureState, NoisyDataset, NumericalAbort, PosteriorSet)
from .harness import ConfigError, ExperimentConfig, load_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ClassDistribution", "ConfigError", "CorruptionMatrix", "DegenerateDistribution",
    "ExperimentConfig", "MixtureState", "NoisyDataset", "NumericalAbort",
    "PosteriorSet", "load_config", "run_experiment",
]
