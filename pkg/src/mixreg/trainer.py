"""Generalized EM for the mixture of regression experts.

One iteration:

* E-step: responsibilities ``h`` from the current parameters.
* Expert M-step: per expert, a weighted least-squares solve for all output
  rows at once (one Cholesky factor per expert), then the weighted mean of
  squared residuals under the *new* weights for the variances.
* Gating M-step: a few steps of gradient ascent on the gating part of Q,
  halving the step whenever it would decrease that term (at most 10
  halvings per step; if none helps, the gate is left where it is).

The expert step maximizes its part of Q exactly and the gating step never
decreases its part, so the log-likelihood is non-decreasing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .exceptions import ArgumentError
from .model import VARIANCE_FLOOR, MixtureModel, expert_log_densities, log_gates, log_joint, predict_mean
from .numerics import WEIGHT_FLOOR, kmeans, log_sum_exp, softmax_log, weighted_least_squares

logger = logging.getLogger(__name__)

INIT_MODES = ("kmeans_partition", "random")
_MAX_HALVINGS = 10


@dataclass(frozen=True)
class TrainingConfig:
    k: int
    max_iters: int = 200
    tol: float = 1e-10
    eta: float = 0.1
    gating_steps: int = 5
    seed: int = 0
    variance_floor: float = VARIANCE_FLOOR
    init: str = "kmeans_partition"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ArgumentError(f"k must be a positive integer, got {self.k}")
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ArgumentError("tol must be > 0")
        if not self.eta > 0:
            raise ArgumentError("eta must be > 0")
        if self.gating_steps < 1:
            raise ArgumentError("gating_steps must be >= 1")
        if not self.variance_floor > 0:
            raise ArgumentError("variance_floor must be > 0")
        if self.init not in INIT_MODES:
            raise ArgumentError(f"init must be one of {INIT_MODES}, got {self.init!r}")


@dataclass
class TrainingTrace:
    """Per-iteration log-likelihood history.

    ``log_likelihoods[0]`` is the initial model; entry ``p`` is the model after
    ``p`` EM iterations, so the list has ``iterations_run + 1`` entries.
    """

    log_likelihoods: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    empty_expert_events: list = field(default_factory=list)

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihoods[-1]


def _check_data(data: Dataset, k: int):
    data.require_targets()
    if data.n_samples < k:
        raise ArgumentError(f"need at least k={k} samples, got {data.n_samples}")


def _fit_block(X, Y, weights, floor):
    """Weighted LS for all outputs plus the weighted residual variance."""
    coef = weighted_least_squares(X, Y, weights)  # (n, m)
    resid = Y - X @ coef
    var = weights @ (resid * resid) / weights.sum()
    return coef.T, np.maximum(var, floor)


def initialize(data: Dataset, config: TrainingConfig) -> MixtureModel:
    """Starting parameters for EM; deterministic given ``config.seed``.

    ``kmeans_partition`` clusters the inputs and fits one expert per cluster;
    ``random`` draws small weights and uses the per-dimension target variance.
    Gating vectors start at zero (uniform gates) in both modes.
    """
    _check_data(data, config.k)
    X, Y = data.x, data.y
    k, n, m = config.k, X.shape[1], Y.shape[1]
    floor = config.variance_floor
    gating = np.zeros((k, n))

    if config.init == "random":
        rng = np.random.default_rng(config.seed)
        weights = rng.uniform(-0.01, 0.01, size=(k, m, n))
        var = np.maximum(Y.var(axis=0), floor)
        return MixtureModel(weights, np.tile(var, (k, 1)), gating, floor)

    labels = kmeans(X, k, seed=config.seed).labels
    weights = np.empty((k, m, n))
    variances = np.empty((k, m))
    everyone = np.ones(X.shape[0])
    for j in range(k):
        members = (labels == j).astype(float)
        if members.sum() == 0:
            members = everyone
        weights[j], variances[j] = _fit_block(X, Y, members, floor)
    return MixtureModel(weights, variances, gating, floor)


def _e_step(model: MixtureModel, data: Dataset):
    lj = log_joint(model, data.x, data.y)
    norm = log_sum_exp(lj, axis=1)
    return np.exp(lj - norm[:, None]), float(norm.sum())


def e_step(model: MixtureModel, data: Dataset) -> np.ndarray:
    """Responsibility matrix ``N x K``; each row sums to one."""
    return _e_step(model, data)[0]


def m_step_experts(data: Dataset, h, config: TrainingConfig, model: MixtureModel | None = None):
    """Closed-form expert updates given responsibilities ``h``.

    Returns ``(weights, variances, empty)`` where ``empty`` lists experts
    whose responsibility mass fell to ``WEIGHT_FLOOR`` or below. Those are
    re-seeded from the samples the current ``model`` reconstructs worst
    (``model`` is required in that case).
    """
    X, Y = data.x, data.require_targets()
    h = np.asarray(h, dtype=float)
    N, n = X.shape
    k = h.shape[1]
    if h.shape[0] != N:
        raise ArgumentError(f"responsibilities have {h.shape[0]} rows for {N} samples")
    floor = config.variance_floor
    weights = np.empty((k, Y.shape[1], n))
    variances = np.empty((k, Y.shape[1]))
    empty = []
    for j in range(k):
        if h[:, j].sum() <= WEIGHT_FLOOR:
            empty.append(j)
            continue
        weights[j], variances[j] = _fit_block(X, Y, h[:, j], floor)

    if empty:
        if model is None:
            raise ArgumentError("an expert is empty and no model was given to reseed it")
        err = ((Y - predict_mean(model, X)) ** 2).sum(axis=1)
        size = min(N, max(n, math.ceil(N / (10 * k))))
        worst = np.argsort(-err, kind="stable")[:size]
        pick = np.zeros(N)
        pick[worst] = 1.0
        for j in empty:
            logger.warning("expert %d is empty; reseeding from %d worst samples", j, size)
            weights[j], variances[j] = _fit_block(X, Y, pick, floor)
    return weights, variances, empty


def gating_objective(params, X, h) -> float:
    """Gating part of Q: ``sum_n sum_j h_nj log g_j(x_n)``."""
    return float(np.sum(h * softmax_log(X @ params.T, axis=1)))


def gating_gradient(params, X, h) -> np.ndarray:
    """Gradient of :func:`gating_objective`: ``sum_n (h_nj - g_j(x_n)) x_n``."""
    g = np.exp(softmax_log(X @ params.T, axis=1))
    return (h - g).T @ X


def m_step_gating(model: MixtureModel, data: Dataset, h, config: TrainingConfig) -> np.ndarray:
    """Safeguarded gradient ascent on the gating parameters; returns ``K x n``."""
    X = data.x
    h = np.asarray(h, dtype=float)
    params = np.array(model.gating)
    current = gating_objective(params, X, h)
    step = config.eta
    for _ in range(config.gating_steps):
        grad = gating_gradient(params, X, h)
        if not np.any(grad):
            break
        # a step size that had to be halved stays halved for later inner steps
        for _ in range(_MAX_HALVINGS + 1):
            candidate = params + step * grad
            value = gating_objective(candidate, X, h)
            if value >= current:
                params, current = candidate, value
                break
            step *= 0.5
        else:
            break
    return params


def evaluate_q(model_new: MixtureModel, model_old: MixtureModel, data: Dataset, h=None) -> float:
    """Expected complete-data log-likelihood ``Q(new | old)``."""
    if h is None:
        h = e_step(model_old, data)
    lj = log_gates(model_new, data.x) + expert_log_densities(model_new, data.x, data.require_targets())
    return float(np.sum(np.asarray(h) * lj))


def em_iteration(model: MixtureModel, data: Dataset, h, config: TrainingConfig):
    """One M-step given responsibilities; returns ``(new_model, empty_experts)``."""
    weights, variances, empty = m_step_experts(data, h, config, model)
    gating = m_step_gating(model, data, h, config)
    new = MixtureModel(weights, variances, gating, config.variance_floor)
    return new, empty


def fit(data: Dataset, config: TrainingConfig, init_model: MixtureModel | None = None):
    """Run EM to convergence or ``config.max_iters``.

    Convergence is declared when ``|L_p - L_{p-1}| / (1 + |L_p|) < tol``.
    Returns ``(model, trace)``; ``trace.final_log_likelihood`` is the
    log-likelihood of the returned model.
    """
    _check_data(data, config.k)
    if init_model is None:
        model = initialize(data, config)
    else:
        if (init_model.k, init_model.input_dim, init_model.output_dim) != (
            config.k,
            data.input_dim,
            data.output_dim,
        ):
            raise ArgumentError("init_model shape does not match data and config")
        model = init_model

    trace = TrainingTrace()
    h, loglik = _e_step(model, data)
    trace.log_likelihoods.append(loglik)
    for p in range(1, config.max_iters + 1):
        model, empty = em_iteration(model, data, h, config)
        trace.empty_expert_events.extend((p, j) for j in empty)
        trace.iterations_run = p
        h, new_loglik = _e_step(model, data)
        trace.log_likelihoods.append(new_loglik)
        change = abs(new_loglik - loglik) / (1.0 + abs(new_loglik))
        loglik = new_loglik
        if change < config.tol:
            trace.converged = True
            break
    logger.debug(
        "EM finished after %d iterations (converged=%s, logL=%.6f)",
        trace.iterations_run,
        trace.converged,
        loglik,
    )
    return model, trace
