"""Synthetic benchmark generators."""

from .synthetic import GeneratorConfig, generate_cf_pair, generate_dataset, generate_trajectory, split_dataset
from .tumor import PkpdParams, TumorSimConfig, TumorTrajectory, simulate_cohort

__all__ = [
    "GeneratorConfig",
    "generate_trajectory",
    "generate_cf_pair",
    "generate_dataset",
    "split_dataset",
    "PkpdParams",
    "TumorSimConfig",
    "TumorTrajectory",
    "simulate_cohort",
]
