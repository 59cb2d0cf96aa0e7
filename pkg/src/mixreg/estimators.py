"""scikit-learn compatible estimators wrapping the EM trainer and ridge baseline.

These compose with ``Pipeline``, ``GridSearchCV``, ``clone`` and friends::

    from sklearn.pipeline import make_pipeline
    from sklearn.decomposition import PCA
    pipe = make_pipeline(PCA(20), MixtureOfExpertsRegressor(n_experts=5))
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baseline import ridge_fit, ridge_predict
from .dataset import Dataset
from .model import gate_probabilities, log_joint, predict_mean
from .numerics import log_sum_exp
from .selection import bic, n_params
from .trainer import TrainingConfig, fit


class MixtureOfExpertsRegressor(RegressorMixin, BaseEstimator):
    """Mixture of linear regression experts with a softmax gate, fitted by EM.

    Parameters
    ----------
    n_experts : int, default=3
        Number of linear experts K.
    max_iter : int, default=200
        EM iteration budget.
    tol : float, default=1e-10
        Stop when ``|dL| / (1 + |L|)`` falls below this.
    eta : float, default=0.1
        Initial step size of the gating gradient ascent.
    gating_steps : int, default=5
        Gradient steps on the gate per M-step.
    variance_floor : float, default=1e-6
        Lower bound on every expert variance.
    init : {"kmeans_partition", "random"}, default="kmeans_partition"
    n_init : int, default=1
        Number of EM runs with seeds ``random_state + r``; the run with the
        highest final log-likelihood is kept.
    random_state : int, default=0

    Attributes
    ----------
    model_ : MixtureModel
    trace_ : TrainingTrace
        Trace of the retained run.
    n_iter_ : int
    converged_ : bool
    log_likelihood_ : float
        Training log-likelihood of the retained run.
    """

    def __init__(
        self,
        n_experts=3,
        max_iter=200,
        tol=1e-10,
        eta=0.1,
        gating_steps=5,
        variance_floor=1e-6,
        init="kmeans_partition",
        n_init=1,
        random_state=0,
    ):
        self.n_experts = n_experts
        self.max_iter = max_iter
        self.tol = tol
        self.eta = eta
        self.gating_steps = gating_steps
        self.variance_floor = variance_floor
        self.init = init
        self.n_init = n_init
        self.random_state = random_state

    def _config(self, seed):
        return TrainingConfig(
            k=self.n_experts,
            max_iters=self.max_iter,
            tol=self.tol,
            eta=self.eta,
            gating_steps=self.gating_steps,
            seed=seed,
            variance_floor=self.variance_floor,
            init=self.init,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        data = Dataset(X, y.reshape(len(y), -1))
        base = 0 if self.random_state is None else int(self.random_state)
        best = None
        for r in range(max(1, int(self.n_init))):
            model, trace = fit(data, self._config(base + r))
            if best is None or trace.final_log_likelihood > best[1].final_log_likelihood:
                best = (model, trace)
        self.model_, self.trace_ = best
        self.n_iter_ = self.trace_.iterations_run
        self.converged_ = self.trace_.converged
        self.log_likelihood_ = self.trace_.final_log_likelihood
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Gate-weighted mean prediction."""
        X = self._check_X(X)
        pred = predict_mean(self.model_, X)
        return pred[:, 0] if self._y_1d else pred

    def predict_proba(self, X):
        """Gate probabilities, ``n_samples x n_experts``."""
        X = self._check_X(X)
        return gate_probabilities(self.model_, X)

    def predict_expert(self, X):
        """Most probable expert per row (lowest index on ties)."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score_samples(self, X, y):
        """Per-sample log-likelihood ``log p(y | x)``."""
        X = self._check_X(X)
        y = np.asarray(y, dtype=float).reshape(X.shape[0], -1)
        return log_sum_exp(log_joint(self.model_, X, y), axis=1)

    def bic(self, X, y):
        """BIC of the fitted model on ``(X, y)``."""
        ll = float(np.sum(self.score_samples(X, y)))
        m = self.model_.output_dim
        return bic(n_params(self.n_experts, self.n_features_in_, m), len(X), ll)


class RidgeRegressor(RegressorMixin, BaseEstimator):
    """Multi-output ridge regression without intercept, solved in closed form."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_1d = y.ndim == 1
        self.model_ = ridge_fit(Dataset(X, y.reshape(len(y), -1)), self.alpha)
        self.coef_ = self.model_.weights
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        pred = ridge_predict(self.model_, X)
        return pred[:, 0] if self._y_1d else pred
