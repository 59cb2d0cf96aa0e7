"""Choosing the number of experts: BIC over a range of K, and k-fold CV."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .dataset import Dataset
from .exceptions import ArgumentError, MixRegError
from .metrics import mae, r2_score
from .model import predict_mean
from .trainer import TrainingConfig, fit

BIC_COLUMNS = ("k", "d", "n_samples", "log_likelihood", "bic", "log10_bic", "seed_of_best")


def n_params(k: int, n: int, m: int) -> int:
    """Free parameters of a K-expert diagonal-covariance mixture: ``K(mn + m + n)``."""
    if min(k, n, m) < 1:
        raise ArgumentError("k, n and m must be positive")
    # Python ints are arbitrary precision
    return int(k) * (int(m) * int(n) + int(m) + int(n))


def bic(d: int, n_samples: int, log_likelihood: float) -> float:
    """Schwarz criterion with natural log: ``d ln N - 2 ln L``."""
    if n_samples < 1:
        raise ArgumentError("n_samples must be >= 1")
    return d * math.log(n_samples) - 2.0 * log_likelihood


@dataclass(frozen=True)
class BicEntry:
    k: int
    d: int
    n_samples: int
    log_likelihood: float
    bic: float
    seed_of_best: int | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def log10_bic(self) -> float:
        # Only meaningful for positive BIC; kept for plotting parity.
        return math.log10(self.bic) if self.bic > 0 else float("nan")

    def as_row(self) -> dict:
        row = {c: getattr(self, c) for c in BIC_COLUMNS}
        row["error"] = self.error or ""
        return row


@dataclass
class BicReport:
    entries: list
    best_k: int | None
    cv: dict = field(default_factory=dict)

    def rows(self) -> list:
        rows = [e.as_row() for e in self.entries]
        for row in rows:
            if row["k"] in self.cv:
                row["cv_mae"], row["cv_r2"] = self.cv[row["k"]]
        return rows

    @property
    def best_k_cv(self) -> int | None:
        if not self.cv:
            return None
        return min(sorted(self.cv), key=lambda k: self.cv[k][0])


def _fit_one(data, config):
    try:
        _, trace = fit(data, config)
        return trace.final_log_likelihood, None
    except MixRegError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def select_k(
    data: Dataset,
    k_range,
    base_config: TrainingConfig,
    restarts: int = 3,
    n_jobs: int = 1,
) -> BicReport:
    """Fit every K in ``k_range`` with ``restarts`` seeds and score each by BIC.

    Restart ``r`` uses seed ``base_config.seed + r`` for every K, and the
    best final log-likelihood per K is kept. A K whose every restart fails
    is reported with its error message instead of being dropped. Ties in
    BIC go to the smaller K.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > data.n_samples:
        raise ArgumentError(f"k range must lie within [1, {data.n_samples}]")
    if restarts < 1:
        raise ArgumentError("restarts must be >= 1")
    N = data.n_samples
    n, m = data.input_dim, data.output_dim

    tasks = [(k, base_config.seed + r) for k in ks for r in range(restarts)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_one)(data, dataclasses.replace(base_config, k=k, seed=s)) for k, s in tasks
    )

    entries = []
    for k in ks:
        runs = [(res, s) for (kk, s), res in zip(tasks, results) if kk == k]
        ok = [(ll, s) for (ll, _), s in runs if ll is not None]
        d = n_params(k, n, m)
        if ok:
            ll, seed = max(ok, key=lambda t: (t[0], -t[1]))
            entries.append(BicEntry(k, d, N, ll, bic(d, N, ll), seed))
        else:
            entries.append(BicEntry(k, d, N, float("nan"), float("nan"), None, runs[0][0][1]))
    good = [e for e in entries if not e.failed]
    best = min(good, key=lambda e: (e.bic, e.k)).k if good else None
    return BicReport(entries, best)


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each sample to one of ``n_folds`` test folds."""

    n_folds: int
    seed: int
    assignment: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def split(self, fold: int):
        """``(train_indices, test_indices)`` for one fold."""
        return np.flatnonzero(self.assignment != fold), self.test_indices(fold)


def make_fold_plan(n_samples: int, n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle then deal samples round-robin, so fold sizes differ by at most one."""
    if n_folds < 2:
        raise ArgumentError("n_folds must be >= 2")
    if n_samples < n_folds:
        raise ArgumentError(f"cannot split {n_samples} samples into {n_folds} folds")
    order = np.random.default_rng(seed).permutation(n_samples)
    assignment = np.empty(n_samples, dtype=np.int64)
    assignment[order] = np.arange(n_samples) % n_folds
    return FoldPlan(n_folds, seed, assignment)


@dataclass(frozen=True)
class KFoldResult:
    fold_mae: tuple
    fold_r2: tuple

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.fold_mae))

    @property
    def mean_r2(self) -> float:
        return float(np.mean(self.fold_r2))


def _fold_scores(data, config, plan, fold):
    train, test = plan.split(fold)
    model, _ = fit(data.subset(train), config)
    pred = predict_mean(model, data.x[test])
    return mae(data.y[test], pred), r2_score(data.y[test], pred)


def kfold_evaluate(data: Dataset, config: TrainingConfig, plan: FoldPlan, n_jobs: int = 1) -> KFoldResult:
    """Train on each fold's complement and score MAE and R^2 on the held-out fold."""
    data.require_targets()
    if plan.assignment.shape != (data.n_samples,):
        raise ArgumentError("fold plan does not match the dataset size")
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_fold_scores)(data, config, plan, f) for f in range(plan.n_folds)
    )
    return KFoldResult(tuple(s[0] for s in scores), tuple(s[1] for s in scores))


def select_k_cv(data: Dataset, k_range, base_config: TrainingConfig, plan: FoldPlan, n_jobs: int = 1) -> dict:
    """Mean held-out ``(MAE, R^2)`` per K."""
    out = {}
    for k in sorted(set(int(k) for k in k_range)):
        res = kfold_evaluate(data, dataclasses.replace(base_config, k=k), plan, n_jobs)
        out[k] = (res.mean_mae, res.mean_r2)
    return out
