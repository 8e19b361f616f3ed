# Experiment Schemas

from manifold_sde.models.experiment import ExperimentConfig, InlineManifold, InlineSystem

__all__ = ["ExperimentConfig", "InlineSystem", "InlineManifold"]
