"""Closed-form multi-output ridge regression (no intercept)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataset import Dataset
from .exceptions import ArgumentError, SingularSystemError
from .metrics import mae


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray  # (m, n)
    lam: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 2 or not np.all(np.isfinite(w)):
            raise ArgumentError("ridge weights must be a finite m x n matrix")
        if not self.lam >= 0:
            raise ArgumentError("lambda must be >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]


def ridge_fit(data: Dataset, lam: float = 1.0) -> RidgeModel:
    """Solve ``(X'X + lam*I) w_i = X' y_i`` for every output with one factorization."""
    X, Y = data.x, data.require_targets()
    if data.n_samples < 1:
        raise ArgumentError("ridge_fit needs at least one sample")
    if lam < 0:
        raise ArgumentError("lambda must be >= 0")
    A = X.T @ X + lam * np.eye(X.shape[1])
    try:
        factor = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"X'X + {lam:g} I is singular; use a positive lambda"
        ) from exc
    coef = linalg.cho_solve(factor, X.T @ Y)
    return RidgeModel(coef.T, float(lam))


def ridge_predict(model: RidgeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim or x.ndim > 2:
        raise ArgumentError(f"input has shape {x.shape}; model expects n={model.input_dim}")
    return x @ model.weights.T


def ridge_grid_search(data: Dataset, lambdas=(0.01, 0.1, 1.0, 10.0), n_folds=5, seed=0):
    """Pick lambda by k-fold MAE; returns ``(best_lambda, {lambda: mean_mae})``.

    Ties go to the larger lambda.
    """
    from .selection import make_fold_plan

    plan = make_fold_plan(data.n_samples, n_folds, seed)
    scores = {}
    for lam in lambdas:
        errs = []
        for f in range(plan.n_folds):
            train, test = plan.split(f)
            model = ridge_fit(data.subset(train), lam)
            errs.append(mae(data.y[test], ridge_predict(model, data.x[test])))
        scores[float(lam)] = float(np.mean(errs))
    best = min(sorted(scores, reverse=True), key=scores.get)
    return best, scores
