"""Numerical kernels shared by the model, trainer and analysis code.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import (
    ArgumentError,
    DegenerateDataError,
    DomainError,
    EmptyExpertError,
    SingularSystemError,
)

WEIGHT_FLOOR = 1e-12

# jitter escalation, in units of trace(A)/n
_JITTER_START = 1e-10
_JITTER_GROWTH = 10.0
_JITTER_CAP = 1e-3


def log_sum_exp(values, axis=None):
    """Compute ``log(sum(exp(values)))`` without overflow or underflow.

    With ``axis=None`` the input is treated as one flat vector and a float is
    returned. With an integer axis the reduction runs along that axis.

    Raises
    ------
    ArgumentError
        If the input (or the reduced axis) is empty.
    DomainError
        If every entry being reduced is ``-inf``.
    """
    v = np.asarray(values, dtype=float)
    if axis is None:
        v = v.ravel()
        if v.size == 0:
            raise ArgumentError("log_sum_exp of an empty vector")
        top = v.max()
        if np.isnan(top) or top == np.inf:
            raise DomainError("log_sum_exp entries must be finite or -inf")
        if top == -np.inf:
            raise DomainError("log_sum_exp: all entries are -inf")
        return float(top + np.log(np.sum(np.exp(v - top))))

    if v.shape[axis] == 0:
        raise ArgumentError("log_sum_exp over an empty axis")
    top = v.max(axis=axis, keepdims=True)
    # NaN and +inf both propagate into the max
    if np.any(np.isnan(top)) or np.any(top == np.inf):
        raise DomainError("log_sum_exp entries must be finite or -inf")
    if np.any(top == -np.inf):
        raise DomainError("log_sum_exp: a slice has all entries -inf")
    out = top + np.log(np.sum(np.exp(v - top), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax_log(logits, axis=-1):
    """Log-softmax along ``axis``: ``logits - log_sum_exp(logits)``."""
    logits = np.asarray(logits, dtype=float)
    return logits - np.expand_dims(log_sum_exp(logits, axis=axis), axis)


def spd_factor(A, jitter=0.0):
    """Cholesky-factor a symmetric matrix, escalating diagonal jitter on failure.

    The first attempt uses ``jitter``. If that fails, the jitter restarts at
    ``1e-10 * trace(A)/n`` (or ``jitter`` if larger) and grows tenfold per
    attempt up to ``1e-3 * trace(A)/n``.

    Returns
    -------
    factor : tuple
        Output of :func:`scipy.linalg.cho_factor`.
    used_jitter : float
        The diagonal shift that made the factorization succeed.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {A.shape}")
    if jitter < 0:
        raise ArgumentError("jitter must be non-negative")
    if not np.all(np.isfinite(A)):
        raise SingularSystemError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * scale):
        raise ArgumentError("matrix is not symmetric")

    n = A.shape[0]
    eye = np.eye(n)
    try:
        return linalg.cho_factor(A + jitter * eye, lower=True), float(jitter)
    except linalg.LinAlgError:
        pass

    base = float(np.trace(A)) / n
    if not base > 0:
        raise SingularSystemError("matrix is not positive definite and has non-positive trace")
    cap = _JITTER_CAP * base
    current = max(jitter, _JITTER_START * base)
    while current <= cap * (1 + 1e-12):
        try:
            return linalg.cho_factor(A + current * eye, lower=True), float(current)
        except linalg.LinAlgError:
            current *= _JITTER_GROWTH
    raise SingularSystemError(
        f"matrix not factorizable with jitter up to {cap:.3g} (1e-3 * trace/n)"
    )


def solve_spd(A, b, jitter=0.0):
    """Solve ``(A + jitter*I) x = b`` for symmetric positive-definite ``A``.

    ``b`` may be a vector or a matrix of right-hand sides; one factorization
    serves all columns. See :func:`spd_factor` for the jitter schedule.
    """
    b = np.asarray(b, dtype=float)
    A = np.asarray(A, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ArgumentError(f"rhs has {b.shape[0]} rows, matrix has {A.shape[0]}")
    factor, _ = spd_factor(A, jitter)
    return linalg.cho_solve(factor, b)


def weighted_least_squares(X, t, h, jitter=0.0):
    """Minimize ``sum_n h_n * (t_n - w.x_n)**2`` through the normal equations.

    ``t`` may be a length-N vector (returns shape ``(n,)``) or an ``N x m``
    matrix of targets solved jointly (returns ``(n, m)``).

    Raises
    ------
    EmptyExpertError
        If the total weight is at or below ``WEIGHT_FLOOR``.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    if X.ndim != 2:
        raise ArgumentError("X must be 2-D")
    if t.shape[0] != X.shape[0] or h.shape != (X.shape[0],):
        raise ArgumentError("X, t and h must have matching sample counts")
    if np.any(h < 0):
        raise ArgumentError("weights must be non-negative")
    if h.sum() <= WEIGHT_FLOOR:
        raise EmptyExpertError(f"total weight {h.sum():.3g} is below {WEIGHT_FLOOR}")
    Xh = X * h[:, None]
    A = Xh.T @ X
    A = 0.5 * (A + A.T)
    return solve_spd(A, Xh.T @ t, jitter)


@dataclass(frozen=True)
class PcaResult:
    """Leading principal components of a data matrix.

    ``components`` has orthonormal rows; ``explained_variance_ratio`` covers
    only the retained components.
    """

    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, data):
        """Project rows of ``data`` onto the components (centered scores)."""
        return (np.asarray(data, dtype=float) - self.mean) @ self.components.T


def pca(data, variance_target=0.85):
    """Principal components via eigendecomposition of the sample covariance.

    Keeps the smallest leading set whose cumulative explained variance ratio
    reaches ``variance_target``. Each component is signed so that its
    largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ArgumentError("pca expects a 2-D matrix")
    n_samples, n_features = data.shape
    if n_samples < 2 or n_features < 1:
        raise ArgumentError(f"pca needs at least 2 rows and 1 column, got {data.shape}")
    if not 0 < variance_target <= 1:
        raise ArgumentError("variance_target must lie in (0, 1]")

    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n_samples - 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    total = evals.sum()
    if not total > 0:
        raise DegenerateDataError("data has zero total variance")

    ratio = evals / total
    cumulative = np.cumsum(ratio)
    keep = int(np.searchsorted(cumulative, variance_target - 1e-12)) + 1
    keep = min(keep, n_features)

    comps = evecs[:, :keep].T.copy()
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(keep), pivots])
    comps *= signs[:, None]
    return PcaResult(
        components=comps,
        explained_variance=evals[:keep],
        explained_variance_ratio=ratio[:keep],
        mean=mean,
    )


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse_history: np.ndarray
    n_iter: int

    @property
    def sse(self) -> float:
        return float(self.sse_history[-1])


def _sq_distances(X, C):
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_distances(X, X[centers])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers.append(idx)
        closest = np.minimum(closest, _sq_distances(X, X[idx : idx + 1])[:, 0])
    return X[centers].copy()


def kmeans(data, k, metric="euclidean", seed=0, max_iters=300):
    """Lloyd's algorithm with k-means++ seeding.

    The cosine metric L2-normalizes rows and then runs Euclidean k-means.
    ``sse_history`` records the within-cluster SSE after every assignment
    step plus the final value; it is non-increasing.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ArgumentError("kmeans expects a 2-D matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ArgumentError(f"k must be in [1, {n}], got {k}")
    if max_iters < 1:
        raise ArgumentError("max_iters must be >= 1")
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise DegenerateDataError("zero-norm row cannot be used with the cosine metric")
        X = X / norms[:, None]
    elif metric != "euclidean":
        raise ArgumentError(f"unknown metric {metric!r}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new_labels = np.argmin(_sq_distances(X, centroids), axis=1)
        history.append(float(((X - centroids[new_labels]) ** 2).sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
    else:
        labels = np.argmin(_sq_distances(X, centroids), axis=1)
        history.append(float(((X - centroids[labels]) ** 2).sum()))
    return KMeansResult(labels=labels, centroids=centroids, sse_history=np.array(history), n_iter=n_iter)
