"""Synthetic mixture-of-experts data with a known generating model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import ArgumentError
from .model import VARIANCE_FLOOR, MixtureModel, gate_probabilities


@dataclass(frozen=True)
class SyntheticSpec:
    k: int = 3
    n: int = 4
    m: int = 3
    n_samples: int = 2000
    gating_scale: float = 3.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("k", "n", "m", "n_samples"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive")
        if self.noise_std < 0:
            raise ArgumentError("noise_std must be >= 0")
        if self.gating_scale < 0:
            raise ArgumentError("gating_scale must be >= 0")


@dataclass(frozen=True)
class SyntheticData:
    data: Dataset
    model: MixtureModel
    labels: np.ndarray


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Draw a random true model and sample ``spec.n_samples`` pairs from it.

    Gating vectors are ``gating_scale * N(0, I)``, expert weights are
    standard normal, inputs are standard normal, and each target is the
    chosen expert's mean plus ``noise_std`` Gaussian noise.
    """
    rng = np.random.default_rng(spec.seed)
    gating = spec.gating_scale * rng.standard_normal((spec.k, spec.n))
    weights = rng.standard_normal((spec.k, spec.m, spec.n))
    variances = np.full((spec.k, spec.m), max(spec.noise_std**2, VARIANCE_FLOOR))
    truth = MixtureModel(weights, variances, gating)

    X = rng.standard_normal((spec.n_samples, spec.n))
    gates = gate_probabilities(truth, X)
    u = rng.random(spec.n_samples)
    labels = (u[:, None] > np.cumsum(gates, axis=1)).sum(axis=1)
    labels = np.minimum(labels, spec.k - 1)
    noise = rng.standard_normal((spec.n_samples, spec.m))
    Y = np.einsum("nij,nj->ni", weights[labels], X) + spec.noise_std * noise
    return SyntheticData(Dataset(X, Y), truth, labels)
