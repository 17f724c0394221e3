"""Intra-class cleaning against the icd descriptor and removal of undersized clusters."""
from __future__ import annotations

import numpy as np

from .embedstore import REMOVED, EmbeddingSet, Partition

DEFAULT_MIN_SIZE = 4


def cluster_centroids(emb: EmbeddingSet, p: Partition) -> tuple[np.ndarray, np.ndarray]:
    """``(cluster_ids, centroids)``: mean member embedding of every non-empty cluster."""
    kept = p.kept
    ids, inv = np.unique(p.labels[kept], return_inverse=True)
    sums = np.zeros((len(ids), emb.dim))
    np.add.at(sums, inv, emb.vectors[kept])
    return ids, sums / np.bincount(inv, minlength=len(ids))[:, None]


def member_centroid_cosine(emb: EmbeddingSet, p: Partition) -> np.ndarray:
    """Cosine of each node to its own cluster centroid (NaN for removed nodes)."""
    out = np.full(p.n, np.nan)
    kept = p.kept
    if kept.size == 0:
        return out
    ids, centroids = cluster_centroids(emb, p)
    unit = centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
    row = np.searchsorted(ids, p.labels[kept])
    out[kept] = np.einsum("ij,ij->i", emb.vectors[kept], unit[row])
    return out


def clean_by_icd(emb: EmbeddingSet, p: Partition, icd: float,
                 stage: str = "icd") -> tuple[Partition, int]:
    """Remove members whose cosine to their (pre-cleaning) centroid is <= icd."""
    cos = member_centroid_cosine(emb, p)
    drop = np.flatnonzero(~np.isnan(cos) & (cos <= icd))
    return p.remove(drop, stage), int(drop.size)


def drop_small_clusters(p: Partition, min_size: int = DEFAULT_MIN_SIZE,
                        stage: str = "min-size") -> tuple[Partition, int]:
    if min_size < 1:
        raise ValueError("min_size must be positive")
    sizes = p.sizes()
    small = np.flatnonzero((sizes > 0) & (sizes < min_size))
    drop = np.flatnonzero(np.isin(p.labels, small) & (p.labels != REMOVED))
    return p.remove(drop, stage).densified(), int(small.size)
