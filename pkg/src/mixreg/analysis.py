"""Attributing stimuli and output regions to experts after training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import AtlasMap, Dataset
from .exceptions import ArgumentError, InsufficientDataError
from .model import MixtureModel, gate_probabilities, responsibilities
from .numerics import kmeans, pca

ASSIGN_MODES = ("gate", "responsibility")


@dataclass(frozen=True)
class ExpertAssignmentTable:
    ids: tuple
    experts: np.ndarray
    probabilities: np.ndarray
    mode: str

    @property
    def k(self) -> int:
        return self.probabilities.shape[1]

    def members(self, expert: int) -> np.ndarray:
        """Row indices assigned to ``expert``."""
        return np.flatnonzero(self.experts == expert)

    def member_ids(self) -> dict:
        return {j: [self.ids[i] for i in self.members(j)] for j in range(self.k)}

    def rows(self) -> list:
        return [
            {"id": sid, "expert": int(e), **{f"p{j}": float(p) for j, p in enumerate(probs)}}
            for sid, e, probs in zip(self.ids, self.experts, self.probabilities)
        ]


def assign_samples(model: MixtureModel, data: Dataset, mode: str = "gate") -> ExpertAssignmentTable:
    """Assign each sample to its most probable expert (lowest index on ties).

    ``gate`` mode needs only inputs and therefore also works for unseen
    stimuli; ``responsibility`` mode uses the posterior given the targets.
    """
    if mode == "gate":
        probs = gate_probabilities(model, data.x)
    elif mode == "responsibility":
        if data.y is None:
            raise ArgumentError("responsibility mode requires targets")
        probs = responsibilities(model, data.x, data.y)
    else:
        raise ArgumentError(f"mode must be one of {ASSIGN_MODES}, got {mode!r}")
    probs = np.atleast_2d(probs)
    return ExpertAssignmentTable(data.row_ids, np.argmax(probs, axis=1), probs, mode)


def region_means(Y, atlas: AtlasMap, aggregate: str = "mean") -> np.ndarray:
    """Collapse output columns into per-region values (``N x regions``).

    Regions without any dimension get 0.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != atlas.n_dims:
        raise ArgumentError(f"targets have {Y.shape[1]} dims, atlas covers {atlas.n_dims}")
    if aggregate not in ("mean", "sum"):
        raise ArgumentError("aggregate must be 'mean' or 'sum'")
    onehot = np.zeros((atlas.n_dims, atlas.n_regions))
    onehot[np.arange(atlas.n_dims), atlas.dim_to_region] = 1.0
    sums = Y @ onehot
    if aggregate == "sum":
        return sums
    counts = onehot.sum(axis=0)
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)


def region_activation_matrix(
    assignments: ExpertAssignmentTable,
    data: Dataset,
    atlas: AtlasMap,
    expert: int,
    aggregate: str = "mean",
) -> np.ndarray:
    """Words-by-regions activation matrix for the samples assigned to ``expert``."""
    Y = data.require_targets()
    if len(assignments.ids) != data.n_samples:
        raise ArgumentError("assignment table does not match the dataset")
    rows = assignments.members(expert)
    if rows.size < 2:
        raise InsufficientDataError(f"expert {expert} has {rows.size} assigned samples; need at least 2")
    return region_means(Y[rows], atlas, aggregate)


@dataclass(frozen=True)
class RegionImportance:
    expert: int | None
    regions: tuple  # ((label, score), ...) sorted by score, descending
    n_components: int
    explained_variance: float

    @property
    def labels(self) -> tuple:
        return tuple(lab for lab, _ in self.regions)


def region_importance(
    matrix,
    region_labels=None,
    variance_target: float = 0.85,
    score_threshold: float = 0.2,
    expert: int | None = None,
) -> RegionImportance:
    """Rank regions by their loading on the leading principal components.

    PCA keeps enough components to explain ``variance_target`` of the
    variance. Importance is ``matrix.T @ scores`` (regions x components); a
    region is listed when some component gives it a positive importance
    above ``score_threshold``, and it is reported with its largest such value.
    Importances are unnormalized, so the threshold is in data units.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2 or M.shape[1] < 1:
        raise ArgumentError(f"need at least 2 words and 1 region, got shape {M.shape}")
    if region_labels is None:
        region_labels = [str(i) for i in range(M.shape[1])]
    if len(region_labels) != M.shape[1]:
        raise ArgumentError("one label per region column is required")
    fit = pca(M, variance_target)
    importance = M.T @ fit.transform(M)
    best = np.where(importance > 0, importance, -np.inf).max(axis=1)
    keep = np.flatnonzero(best > score_threshold)
    keep = keep[np.argsort(-best[keep], kind="stable")]
    return RegionImportance(
        expert=expert,
        regions=tuple((str(region_labels[i]), float(best[i])) for i in keep),
        n_components=fit.n_components,
        explained_variance=float(fit.explained_variance_ratio.sum()),
    )


def common_regions(importances) -> tuple:
    """Labels qualifying for every expert, ordered as in the first result."""
    importances = list(importances)
    if not importances:
        return ()
    shared = set.intersection(*(set(r.labels) for r in importances))
    return tuple(lab for lab in importances[0].labels if lab in shared)


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    members: dict
    centroids: np.ndarray
    sse: float


def cluster_stimuli(matrix, k: int, metric: str = "cosine", seed: int = 0, ids=None, max_iters: int = 300) -> ClusterResult:
    """k-means over rows (embeddings or activation vectors) with member lists by id."""
    M = np.asarray(matrix, dtype=float)
    res = kmeans(M, k, metric=metric, seed=seed, max_iters=max_iters)
    ids = [str(i) for i in range(M.shape[0])] if ids is None else list(ids)
    members = {c: [ids[i] for i in np.flatnonzero(res.labels == c)] for c in range(k)}
    return ClusterResult(res.labels, members, res.centroids, res.sse)
