"""Anchor sampling and squared-Euclidean similarity vectors.

The toolkit standardizes on squared Euclidean distance everywhere: a larger
value always means less similar. Anchor order is fixed at sampling time and
persisted, because downstream selector weights are positionally bound to it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .store import EmbeddingDataset, EmbeddingRecord, Split


@dataclass(frozen=True)
class ReferenceSet:
    """Ordered anchor row indices into an EmbeddingDataset."""

    row_ids: np.ndarray  # int64, unique, order significant
    seed: int
    fraction: float

    @property
    def n(self) -> int:
        return int(len(self.row_ids))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReferenceSet):
            return NotImplemented
        return (
            np.array_equal(self.row_ids, other.row_ids)
            and self.seed == other.seed
            and self.fraction == other.fraction
        )


@dataclass(frozen=True)
class SimilarityVector:
    """Squared distances from one target row to every anchor, in anchor order."""

    values: np.ndarray  # float64, length N
    target_row: int


def sample_reference_set(
    ds: EmbeddingDataset,
    fraction: float,
    seed: int,
    pool_splits: Tuple[Split, ...] = (Split.REFERENCE_POOL,),
) -> ReferenceSet:
    """Sample anchors uniformly without replacement from the reference pool.

    ``pool_splits`` widens the candidate rows for overlap ablations; the
    default keeps anchors disjoint from both attack splits.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    mask = np.isin(ds.splits, [int(s) for s in pool_splits])
    pool = np.flatnonzero(mask)
    if pool.size == 0:
        raise ValueError("reference pool is empty")
    n = max(1, int(round(fraction * pool.size)))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(pool)[:n].astype(np.int64)
    return ReferenceSet(row_ids=chosen, seed=seed, fraction=fraction)


def similarity_vector(
    target: EmbeddingRecord, refs: ReferenceSet, ds: EmbeddingDataset
) -> SimilarityVector:
    """Squared Euclidean distance from the target to each anchor (no sqrt)."""
    vec = np.asarray(target.vector, dtype=np.float64)
    if vec.shape != (ds.dim,):
        raise ValueError(f"target vector has shape {vec.shape}, dataset dim is {ds.dim}")
    anchors = ds.vectors[refs.row_ids].astype(np.float64)
    values = ((anchors - vec) ** 2).sum(axis=1)
    return SimilarityVector(values=values, target_row=target.row_id)


def distance_matrix(
    targets: Sequence[int], refs: ReferenceSet, ds: EmbeddingDataset
) -> np.ndarray:
    """(T x N) matrix of squared distances; row t matches similarity_vector.

    Computed in float64 by explicit differencing (not the dot-product
    expansion) so entries agree with a naive per-pair loop to roundoff.
    Chunked over targets to bound memory; chunking cannot change results
    because each row is reduced independently.
    """
    rows = np.asarray(targets, dtype=np.int64)
    anchors = ds.vectors[refs.row_ids].astype(np.float64)
    n_anchors = anchors.shape[0]
    out = np.empty((rows.size, n_anchors), dtype=np.float64)
    if rows.size == 0:
        return out
    chunk = max(1, 2_000_000 // max(1, n_anchors * ds.dim))
    for start in range(0, rows.size, chunk):
        block = ds.vectors[rows[start : start + chunk]].astype(np.float64)
        diff = block[:, None, :] - anchors[None, :, :]
        out[start : start + chunk] = (diff * diff).sum(axis=2)
    return out
