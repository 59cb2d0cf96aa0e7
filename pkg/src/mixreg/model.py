"""Mixture of linear regression experts with a softmax gate.

The conditional density is

    p(y | x) = sum_j g_j(x) N(y; W_j x, diag(sigma2_j))
    g_j(x)   = exp(v_j . x) / sum_i exp(v_i . x)

All density arithmetic happens in the log domain: with thousands of output
dimensions the Gaussian densities underflow long before the mixture does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import ArgumentError
from .numerics import log_sum_exp, softmax_log

VARIANCE_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Expert:
    """One linear-Gaussian expert: ``y ~ N(W x, diag(variances))``."""

    weights: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        v = _readonly(self.variances)
        if w.ndim != 2 or v.shape != (w.shape[0],):
            raise ArgumentError(f"weights {w.shape} and variances {v.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise ArgumentError("expert parameters must be finite")
        if np.any(v <= 0):
            raise ArgumentError("expert variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variances", v)


@dataclass(frozen=True)
class GatingNetwork:
    """Softmax gate with one parameter vector per expert (rows of ``params``)."""

    params: np.ndarray

    def __post_init__(self):
        p = _readonly(self.params)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ArgumentError("gating params must be a K x n matrix with K >= 1")
        if not np.all(np.isfinite(p)):
            raise ArgumentError("gating params must be finite")
        object.__setattr__(self, "params", p)


@dataclass(frozen=True)
class MixtureModel:
    """Immutable parameter set of a K-expert mixture.

    Parameters are stored stacked: ``weights`` is ``(K, m, n)``,
    ``variances`` is ``(K, m)`` and ``gating`` is ``(K, n)``. Variances below
    ``variance_floor`` are raised to it on construction.
    """

    weights: np.ndarray
    variances: np.ndarray
    gating: np.ndarray
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        g = np.asarray(self.gating, dtype=float)
        if w.ndim != 3 or w.shape[0] < 1:
            raise ArgumentError(f"weights must be (K, m, n) with K >= 1, got {w.shape}")
        k, m, n = w.shape
        if v.shape != (k, m):
            raise ArgumentError(f"variances must be {(k, m)}, got {v.shape}")
        if g.shape != (k, n):
            raise ArgumentError(f"gating must be {(k, n)}, got {g.shape}")
        if not self.variance_floor > 0:
            raise ArgumentError("variance_floor must be positive")
        for name, a in (("weights", w), ("variances", v), ("gating", g)):
            if not np.all(np.isfinite(a)):
                raise ArgumentError(f"{name} must be finite")
        if np.any(v < 0):
            raise ArgumentError("variances must be non-negative")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "variances", _readonly(np.maximum(v, self.variance_floor)))
        object.__setattr__(self, "gating", _readonly(g))

    @classmethod
    def from_parts(cls, experts, gating: GatingNetwork, variance_floor=VARIANCE_FLOOR):
        experts = list(experts)
        if not experts:
            raise ArgumentError("need at least one expert")
        shapes = {e.weights.shape for e in experts}
        if len(shapes) != 1:
            raise ArgumentError(f"experts disagree on shape: {sorted(shapes)}")
        return cls(
            np.stack([e.weights for e in experts]),
            np.stack([e.variances for e in experts]),
            gating.params,
            variance_floor,
        )

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[2]

    @property
    def experts(self) -> list:
        return [Expert(self.weights[j], self.variances[j]) for j in range(self.k)]

    @property
    def gating_network(self) -> GatingNetwork:
        return GatingNetwork(self.gating)

    def replace(self, **changes) -> "MixtureModel":
        fields = dict(
            weights=self.weights,
            variances=self.variances,
            gating=self.gating,
            variance_floor=self.variance_floor,
        )
        fields.update(changes)
        return MixtureModel(**fields)

    def permute(self, order) -> "MixtureModel":
        """Relabel experts: new expert ``i`` is old expert ``order[i]``."""
        order = np.asarray(order)
        return self.replace(
            weights=self.weights[order],
            variances=self.variances[order],
            gating=self.gating[order],
        )


def _inputs(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ArgumentError(f"input has shape {x.shape}; model expects n={model.input_dim}")
    return X, single


def _targets(model, y, n_rows):
    y = np.asarray(y, dtype=float)
    Y = y[None, :] if y.ndim == 1 else y
    if Y.shape != (n_rows, model.output_dim):
        raise ArgumentError(f"target has shape {y.shape}; model expects m={model.output_dim}")
    return Y


def log_gates(model: MixtureModel, X) -> np.ndarray:
    """Log gate probabilities, ``N x K``."""
    X, _ = _inputs(model, X)
    return softmax_log(X @ model.gating.T, axis=1)


def gate_probabilities(model: MixtureModel, x) -> np.ndarray:
    """Softmax gate probabilities for one input (``K``) or a batch (``N x K``)."""
    X, single = _inputs(model, x)
    g = np.exp(log_gates(model, X))
    return g[0] if single else g


def expert_log_density(expert: Expert, x, y) -> float:
    """``log N(y; W x, diag(variances))`` for a single expert and sample."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = expert.weights.shape
    if x.shape != (n,) or y.shape != (m,):
        raise ArgumentError(f"expected x of length {n} and y of length {m}")
    var = expert.variances
    r = y - expert.weights @ x
    return float(-0.5 * m * _LOG_2PI - 0.5 * np.log(var).sum() - 0.5 * np.sum(r * r / var))


def expert_log_densities(model: MixtureModel, X, Y) -> np.ndarray:
    """Per-sample, per-expert log densities, ``N x K``.

    Loops over experts so peak memory stays at one ``N x m`` residual block.
    """
    X, _ = _inputs(model, X)
    Y = _targets(model, Y, X.shape[0])
    m = model.output_dim
    out = np.empty((X.shape[0], model.k))
    for j in range(model.k):
        var = model.variances[j]
        r = Y - X @ model.weights[j].T
        out[:, j] = -0.5 * m * _LOG_2PI - 0.5 * np.log(var).sum() - 0.5 * (r * r / var).sum(axis=1)
    return out


def log_joint(model: MixtureModel, X, Y) -> np.ndarray:
    """``log g_j(x_n) + log p(y_n | x_n, theta_j)``, ``N x K``."""
    return log_gates(model, X) + expert_log_densities(model, X, Y)


def responsibilities(model: MixtureModel, x, y) -> np.ndarray:
    """Posterior expert probabilities for one sample (``K``) or a batch (``N x K``)."""
    X, single = _inputs(model, x)
    lj = log_joint(model, X, y)
    h = np.exp(lj - log_sum_exp(lj, axis=1)[:, None])
    return h[0] if single else h


def predict_mean(model: MixtureModel, x) -> np.ndarray:
    """Gate-weighted average of the expert means, ``sum_j g_j(x) W_j x``."""
    X, single = _inputs(model, x)
    g = np.exp(log_gates(model, X))
    out = np.zeros((X.shape[0], model.output_dim))
    for j in range(model.k):
        out += g[:, j : j + 1] * (X @ model.weights[j].T)
    return out[0] if single else out


def log_likelihood(model: MixtureModel, data: Dataset) -> float:
    """Mixture log-likelihood summed over the samples of ``data``."""
    Y = data.require_targets()
    if data.n_samples == 0:
        return 0.0
    return float(log_sum_exp(log_joint(model, data.x, Y), axis=1).sum())


def assign_expert(model: MixtureModel, x):
    """Most probable expert under the gate; ties go to the lowest index.

    Returns ``(index, probabilities)``.
    """
    g = gate_probabilities(model, x)
    if g.ndim != 1:
        raise ArgumentError("assign_expert takes a single input vector")
    return int(np.argmax(g)), g
