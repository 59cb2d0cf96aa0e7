"""In-memory containers for paired stimulus/response data and atlases."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ArgumentError


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Inputs ``x`` (N x n), optional targets ``y`` (N x m), optional row ids.

    ``y`` may be omitted for prediction-only data (unseen stimuli).
    """

    x: np.ndarray
    y: Optional[np.ndarray] = None
    ids: Optional[tuple] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ArgumentError(f"x must be 2-D, got {x.ndim}-D")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("x contains non-finite values")
        object.__setattr__(self, "x", _frozen(x))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.ndim == 1:
                y = y[:, None]
            if y.ndim != 2 or y.shape[0] != x.shape[0]:
                raise ArgumentError(f"y shape {y.shape} incompatible with x shape {x.shape}")
            if not np.all(np.isfinite(y)):
                raise ArgumentError("y contains non-finite values")
            object.__setattr__(self, "y", _frozen(y))
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != x.shape[0]:
                raise ArgumentError(f"{len(ids)} ids for {x.shape[0]} rows")
            object.__setattr__(self, "ids", ids)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        if self.y is None:
            raise ArgumentError("dataset has no targets")
        return self.y.shape[1]

    @property
    def row_ids(self) -> tuple:
        """Explicit ids, or the row indices as strings."""
        return self.ids if self.ids is not None else tuple(str(i) for i in range(self.n_samples))

    def require_targets(self) -> np.ndarray:
        if self.y is None:
            raise ArgumentError("this operation requires targets (y)")
        return self.y

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        ids = None if self.ids is None else tuple(self.ids[i] for i in index)
        return Dataset(self.x[index], None if self.y is None else self.y[index], ids)


@dataclass(frozen=True, eq=False)
class AtlasMap:
    """Maps every output dimension to one region label."""

    region_labels: tuple
    dim_to_region: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = tuple(str(s) for s in self.region_labels)
        if len(set(labels)) != len(labels):
            raise ArgumentError("region labels must be unique")
        idx = np.asarray(self.dim_to_region)
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise ArgumentError("dim_to_region must be a 1-D integer vector")
        if idx.size and (idx.min() < 0 or idx.max() >= len(labels)):
            raise ArgumentError("dim_to_region references an unknown region")
        idx = idx.astype(np.int64, copy=True)
        idx.setflags(write=False)
        object.__setattr__(self, "region_labels", labels)
        object.__setattr__(self, "dim_to_region", idx)

    def __eq__(self, other):
        if not isinstance(other, AtlasMap):
            return NotImplemented
        return self.region_labels == other.region_labels and np.array_equal(self.dim_to_region, other.dim_to_region)

    def __hash__(self):
        return hash((self.region_labels, self.dim_to_region.tobytes()))

    @classmethod
    def from_labels(cls, per_dim_labels: Sequence[str]) -> "AtlasMap":
        """Build from one label per output dimension; regions ordered by first use."""
        labels: list = []
        lookup: dict = {}
        idx = np.empty(len(per_dim_labels), dtype=np.int64)
        for d, lab in enumerate(per_dim_labels):
            lab = str(lab)
            if lab not in lookup:
                lookup[lab] = len(labels)
                labels.append(lab)
            idx[d] = lookup[lab]
        return cls(tuple(labels), idx)

    @property
    def n_dims(self) -> int:
        return self.dim_to_region.size

    @property
    def n_regions(self) -> int:
        return len(self.region_labels)

    @property
    def unused_labels(self) -> tuple:
        counts = np.bincount(self.dim_to_region, minlength=self.n_regions)
        return tuple(lab for lab, c in zip(self.region_labels, counts) if c == 0)
