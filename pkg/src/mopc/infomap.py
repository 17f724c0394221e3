"""Two-level map equation and a greedy Infomap optimizer for undirected graphs.

Flow model: no teleportation.  A node's visit rate is its strength divided
by twice the total edge weight; an undirected edge carries ``w / W`` of the
flow, half in each direction.

Codelength in bits::

    L = plogp(q) - 2 sum_m plogp(q_m) - sum_u plogp(p_u) + sum_m plogp(q_m + p_m)

with ``q_m`` the exit flow of module ``m``, ``q = sum_m q_m`` and ``p_m`` the
summed visit rate of the module's nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .embedstore import REMOVED, Partition
from .graph import SimilarityGraph

MIN_IMPROVEMENT = 1e-10


@dataclass
class FlowGraph:
    n: int
    node_flow: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_flow: np.ndarray
    dropped_negative: int = 0

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.node_flow > 0)

    def flow_matrix(self) -> sparse.csr_matrix:
        """Symmetric matrix of directed flows ``edge_flow / 2`` (rows sum to node flow)."""
        half = self.edge_flow / 2
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        return sparse.csr_matrix((np.concatenate([half, half]), (rows, cols)),
                                 shape=(self.n, self.n))


@dataclass(frozen=True)
class MapEquationScore:
    codelength: float
    module_count: int
    index_codelength: float = 0.0
    module_codelength: float = 0.0


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


def _plogp_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def to_flow(g: SimilarityGraph) -> FlowGraph:
    negative = g.weight < 0
    src, dst, w = g.src[~negative], g.dst[~negative], g.weight[~negative]
    total = float(w.sum())
    if total <= 0:
        raise ValueError("graph has zero total edge weight")
    strength = np.bincount(src, weights=w, minlength=g.n) + np.bincount(dst, weights=w, minlength=g.n)
    return FlowGraph(g.n, strength / (2 * total), src, dst, w / total,
                     dropped_negative=int(negative.sum()))


def _check_labels(f: FlowGraph, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (f.n,):
        raise ValueError(f"partition covers {labels.size} nodes, graph has {f.n}")
    if np.any((labels == REMOVED) & (f.node_flow > 0)):
        raise ValueError("partition removes a node that carries flow")
    if np.any(labels < REMOVED):
        raise ValueError("invalid cluster id")
    return labels


def map_equation(f: FlowGraph, p: Partition | np.ndarray) -> MapEquationScore:
    labels = _check_labels(f, p.labels if isinstance(p, Partition) else p)
    active = f.node_flow > 0
    _, mod = np.unique(labels[active], return_inverse=True)
    m = int(mod.max()) + 1 if mod.size else 0
    full = np.full(f.n, -1)
    full[active] = mod
    module_flow = np.bincount(mod, weights=f.node_flow[active], minlength=m)
    ms, md = full[f.src], full[f.dst]
    cross = ms != md
    half = f.edge_flow[cross] / 2
    exit_flow = (np.bincount(ms[cross], weights=half, minlength=m)
                 + np.bincount(md[cross], weights=half, minlength=m))
    q = exit_flow.sum()
    node_term = _plogp_array(f.node_flow[active]).sum()
    index = _plogp(q) - _plogp_array(exit_flow).sum()
    modules = (-_plogp_array(exit_flow).sum() - node_term
               + _plogp_array(exit_flow + module_flow).sum())
    return MapEquationScore(float(index + modules), m, float(index), float(modules))


class _Level:
    """Aggregated graph: supernodes with visit rate, exit flow and off-diagonal flows."""

    def __init__(self, flow: sparse.csr_matrix, node_flow: np.ndarray):
        flow = flow.tocsr()
        diag = flow.diagonal()
        flow = flow - sparse.diags(diag)
        flow.eliminate_zeros()
        flow.sort_indices()
        self.g = flow.shape[0]
        self.indptr = flow.indptr.tolist()
        self.indices = flow.indices.tolist()
        self.data = flow.data.tolist()
        self.p = node_flow.tolist()
        self.exit = np.asarray(flow.sum(axis=1)).ravel().tolist()
        self.matrix = flow

    def module_stats(self, mod: list[int]):
        mod_arr = np.asarray(mod)
        p_m = np.bincount(mod_arr, weights=self.p, minlength=self.g)
        out = np.bincount(mod_arr, weights=self.exit, minlength=self.g)
        coo = self.matrix.tocoo()
        inside = mod_arr[coo.row] == mod_arr[coo.col]
        internal = np.bincount(mod_arr[coo.row[inside]], weights=coo.data[inside], minlength=self.g)
        return (out - internal).tolist(), p_m.tolist()


def _local_moves(level: _Level, mod: list[int], rng: np.random.Generator,
                 trace: list | None = None, base: float = 0.0) -> tuple[list[int], int]:
    """Greedy node moves until a full sweep makes no improving move.

    ``base`` is the codelength of the starting assignment; when ``trace`` is a
    list, the running codelength after every accepted move is appended to it.
    """
    q_m, p_m = level.module_stats(mod)
    size = [0] * level.g
    for a in mod:
        size[a] += 1
    empty = [m for m in range(level.g - 1, -1, -1) if size[m] == 0]
    q = sum(q_m)
    indptr, indices, data = level.indptr, level.indices, level.data
    p, exit_ = level.p, level.exit
    current = base
    total_moves = 0
    while True:
        moved = 0
        for u in rng.permutation(level.g).tolist():
            a = mod[u]
            links: dict[int, float] = {}
            for j in range(indptr[u], indptr[u + 1]):
                b = mod[indices[j]]
                links[b] = links.get(b, 0.0) + data[j]
            pu, ou = p[u], exit_[u]
            w_a = links.get(a, 0.0)
            qa_new = max(q_m[a] - ou + 2 * w_a, 0.0)
            pa_new = p_m[a] - pu
            leave = (-2 * (_plogp(qa_new) - _plogp(q_m[a]))
                     + _plogp(qa_new + pa_new) - _plogp(q_m[a] + p_m[a]))
            candidates = sorted(b for b in links if b != a)
            if size[a] > 1 and empty:
                candidates.append(empty[-1])
            best_delta, best_b, best_qb = 0.0, a, 0.0
            for b in candidates:
                w_b = links.get(b, 0.0)
                qb_new = max(q_m[b] + ou - 2 * w_b, 0.0)
                q_new = q - q_m[a] - q_m[b] + qa_new + qb_new
                delta = (leave + _plogp(q_new) - _plogp(q)
                         - 2 * (_plogp(qb_new) - _plogp(q_m[b]))
                         + _plogp(qb_new + p_m[b] + pu) - _plogp(q_m[b] + p_m[b]))
                if delta < best_delta:
                    best_delta, best_b, best_qb = delta, b, qb_new
            if best_b == a or best_delta > -MIN_IMPROVEMENT:
                continue
            b = best_b
            if size[b] == 0:
                empty.pop()
            q = q - q_m[a] - q_m[b] + qa_new + best_qb
            q_m[a], p_m[a] = qa_new, pa_new
            q_m[b], p_m[b] = best_qb, p_m[b] + pu
            size[a] -= 1
            size[b] += 1
            if size[a] == 0:
                q_m[a] = p_m[a] = 0.0
                empty.append(a)
            mod[u] = b
            moved += 1
            current += best_delta
            if trace is not None:
                trace.append(current)
        total_moves += moved
        if moved == 0:
            return mod, total_moves


def _compact(labels: np.ndarray) -> np.ndarray:
    """Renumber labels 0..m-1 in order of first appearance."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv]


def _aggregate(flow: sparse.csr_matrix, node_flow: np.ndarray, labels: np.ndarray) -> _Level:
    m = int(labels.max()) + 1
    onehot = sparse.csr_matrix((np.ones(len(labels)), (np.arange(len(labels)), labels)),
                               shape=(len(labels), m))
    return _Level(onehot.T @ flow @ onehot, np.bincount(labels, weights=node_flow, minlength=m))


def optimize(f: FlowGraph, seed: int = 42, max_rounds: int = 50,
             trace: list | None = None) -> np.ndarray:
    """Module label per active node (``f.active`` order), compacted by first appearance."""
    active = f.active
    if active.size == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    flow = f.flow_matrix()[active][:, active].tocsr()
    node_flow = f.node_flow[active]
    node_level = _Level(flow, node_flow)

    def codelength(labels):
        full = np.full(f.n, REMOVED)
        full[active] = labels
        return map_equation(f, full).codelength

    labels = np.arange(active.size)
    best = codelength(labels)
    for _ in range(max_rounds):
        start = best
        mod, _ = _local_moves(node_level, labels.tolist(), rng, trace, start)
        labels = _compact(np.asarray(mod))
        while True:
            level = _aggregate(flow, node_flow, labels)
            base = codelength(labels) if trace is not None else 0.0
            sup, moves = _local_moves(level, list(range(level.g)), rng, trace, base)
            if moves == 0:
                break
            labels = _compact(np.asarray(sup)[labels])
        best = codelength(labels)
        if best >= start - MIN_IMPROVEMENT:
            break
    # greedy moves cannot reach these coarse solutions when they win
    _, components = csgraph.connected_components(flow, directed=False)
    for candidate in (np.zeros(active.size, dtype=np.int64), _compact(components)):
        length = codelength(candidate)
        if length < best - MIN_IMPROVEMENT:
            labels, best = candidate, length
    return labels


def cluster(f: FlowGraph, seed: int = 42, trace: list | None = None) -> Partition:
    """Greedy two-level Infomap; nodes without flow come back ``REMOVED``."""
    labels = np.full(f.n, REMOVED, dtype=np.int64)
    active = f.active
    labels[active] = optimize(f, seed=seed, trace=trace)
    part = Partition(labels)
    for u in np.flatnonzero(labels == REMOVED):
        part.removed_at[u] = "isolated"
    return part
