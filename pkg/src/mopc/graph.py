"""Exact cosine k-nearest-neighbour graphs, elbow selection of k, noise-edge pruning."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .embedstore import EmbeddingSet

DEFAULT_CANDIDATES = (5, 10, 20, 40, 80)
_BLOCK = 1024


@dataclass
class SimilarityGraph:
    """Undirected weighted graph stored as a canonical edge list (``src < dst``)."""
    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    k: int | None = None
    symmetric: bool = True

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)

    @property
    def num_edges(self) -> int:
        return len(self.weight)

    def degree(self) -> np.ndarray:
        return (np.bincount(self.src, minlength=self.n)
                + np.bincount(self.dst, minlength=self.n))

    @property
    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degree() == 0)

    def to_sparse(self) -> sparse.csr_matrix:
        """Symmetric adjacency matrix (both directions stored)."""
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        data = np.concatenate([self.weight, self.weight])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def neighbors(self, u: int) -> list[tuple[int, float]]:
        out = [(int(v), float(w)) for v, w in zip(self.dst[self.src == u], self.weight[self.src == u])]
        out += [(int(v), float(w)) for v, w in zip(self.src[self.dst == u], self.weight[self.dst == u])]
        return sorted(out)

    def subgraph_edges(self, keep: np.ndarray) -> "SimilarityGraph":
        return SimilarityGraph(self.n, self.src[keep], self.dst[keep], self.weight[keep],
                               k=self.k, symmetric=self.symmetric)


def knn_indices(emb: EmbeddingSet, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-``k`` cosine neighbours of every row.

    Returns ``(indices, sims)``, both ``n x k`` and sorted by decreasing
    similarity; equal similarities rank the lower index first.
    """
    n = emb.n
    if not 0 < k < n:
        raise ValueError(f"k must satisfy 0 < k < n (k={k}, n={n})")
    x = emb.vectors
    idx = np.empty((n, k), dtype=np.int64)
    sims = np.empty((n, k))
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = x[start:stop] @ x.T
        block[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        order = np.argsort(-block, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        sims[start:stop] = np.take_along_axis(block, order, axis=1)
    return idx, np.clip(sims, -1.0, 1.0)


def build_knn(emb: EmbeddingSet, k: int) -> SimilarityGraph:
    """Exact cosine kNN graph, symmetrised by edge union."""
    idx, sims = knn_indices(emb, k)
    src = np.repeat(np.arange(emb.n), k)
    dst = idx.ravel()
    w = sims.ravel()
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    key = lo * emb.n + hi
    _, first = np.unique(key, return_index=True)
    return SimilarityGraph(emb.n, lo[first], hi[first], w[first], k=k)


@dataclass
class ElbowResult:
    k: int
    candidates: list[int]
    curve: list[float]
    distances: list[float] = field(default_factory=list)
    degenerate: bool = False


def knee_index(xs, ys) -> tuple[int, np.ndarray, bool]:
    """Index of the point farthest from the chord joining the curve endpoints.

    Both axes are min-max normalised first; callers pass log-spaced k values
    on a log axis.  A flat distance profile (a
    straight line) returns the first interior point and ``degenerate=True``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) < 3:
        raise ValueError("knee detection needs at least 3 points")

    def scaled(v):
        span = v.max() - v.min()
        return (v - v.min()) / span if span > 0 else np.zeros_like(v)

    x, y = scaled(xs), scaled(ys)
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    norm = np.hypot(dx, dy)
    dist = np.abs(dy * (x - x[0]) - dx * (y - y[0])) / norm if norm > 0 else np.zeros_like(x)
    dist[0] = dist[-1] = 0.0
    if dist.max() <= 1e-12:
        return 1, dist, True
    return int(np.argmax(dist)), dist, False


def elbow_select_k(emb: EmbeddingSet, candidates=DEFAULT_CANDIDATES) -> ElbowResult:
    """Pick k at the knee of the mean k-th-neighbour similarity curve."""
    candidates = sorted(int(c) for c in candidates if c < emb.n)
    if len(candidates) < 3:
        raise ValueError(f"need at least 3 candidate k values below n={emb.n}")
    _, sims = knn_indices(emb, candidates[-1])
    curve = [float(sims[:, c - 1].mean()) for c in candidates]
    i, dist, degenerate = knee_index(np.log(candidates), curve)
    if degenerate:
        warnings.warn("elbow curve is linear; returning first interior candidate")
    return ElbowResult(candidates[i], candidates, curve, dist.tolist(), degenerate)


def prune_by_ned(g: SimilarityGraph, ned: float) -> tuple[SimilarityGraph, int]:
    """Keep only edges with weight strictly greater than ``ned``."""
    keep = g.weight > ned
    return g.subgraph_edges(keep), int((~keep).sum())


def save_graph(g: SimilarityGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n={g.n} k={g.k if g.k is not None else 'none'}\n")
        fh.writelines(f"{u} {v} {w!r}\n" for u, v, w in
                      zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist()))


def load_graph(path) -> SimilarityGraph:
    with open(path, encoding="utf-8") as fh:
        header = dict(field.split("=") for field in fh.readline().split())
        src, dst, w = [], [], []
        for line in fh:
            if line.strip():
                u, v, weight = line.split()
                u, v = int(u), int(v)
                src.append(min(u, v))
                dst.append(max(u, v))
                w.append(float(weight))
    k = None if header.get("k", "none") == "none" else int(header["k"])
    return SimilarityGraph(int(header["n"]), src, dst, w, k=k)
