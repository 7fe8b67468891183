"""KRnet flows, VAE-KRnet and variational Bayes experiments (C++ core)."""

from ._vaekrnet import (
    ConfigError,
    InverseProblem,
    IoError,
    KRnet,
    LinearProblem,
    TrainingAborted,
    VaeKrnet,
    parse_config,
    run,
    sample_manifest,
)

__all__ = [
    "ConfigError",
    "InverseProblem",
    "IoError",
    "KRnet",
    "LinearProblem",
    "TrainingAborted",
    "VaeKrnet",
    "parse_config",
    "run",
    "sample_manifest",
]
