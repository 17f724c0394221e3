"""Progressive merging of mutually-nearest clusters over a descending threshold schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import Descriptors
from .embedstore import EmbeddingSet, Partition
from .refine import cluster_centroids

DEFAULT_STEPS = 10


@dataclass(frozen=True)
class MergeEvent:
    threshold: float
    round: int
    kept: int
    absorbed: int
    similarity: float


def merge_schedule(start: float, cmd: float, steps: int = DEFAULT_STEPS) -> list[float]:
    """Linearly spaced thresholds from ``start`` down to ``cmd`` (both inclusive)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if start <= cmd:
        raise ValueError(f"start threshold {start} must exceed cmd {cmd}")
    if steps == 1:
        return [float(cmd)]
    out = np.linspace(start, cmd, steps).tolist()
    out[0], out[-1] = float(start), float(cmd)
    return out


def centroid_similarity(emb: EmbeddingSet, p: Partition) -> tuple[np.ndarray, np.ndarray]:
    ids, centroids = cluster_centroids(emb, p)
    unit = centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
    return ids, np.clip(unit @ unit.T, -1.0, 1.0)


def mutual_pairs(sim: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)``, ``i < j``, that are each other's most similar and >= threshold."""
    if len(sim) < 2:
        return []
    sim = sim.copy()
    np.fill_diagonal(sim, -np.inf)
    nearest = np.argmax(sim, axis=1)  # ties -> lower index
    pairs = []
    for i, j in enumerate(nearest.tolist()):
        if i < j and nearest[j] == i and sim[i, j] >= threshold:
            pairs.append((i, j))
    return pairs


def merge_pass(emb: EmbeddingSet, p: Partition, threshold: float
               ) -> tuple[Partition, list[MergeEvent]]:
    """Merge mutual-nearest cluster pairs at ``threshold`` until none qualifies.

    Cluster ids are kept stable: the absorbed cluster's members take the lower
    id, so the returned log can be replayed on the input labels.
    """
    out = p.copy()
    log: list[MergeEvent] = []
    rnd = 0
    while True:
        ids, sim = centroid_similarity(emb, out)
        pairs = mutual_pairs(sim, threshold)
        if not pairs:
            return out, log
        for i, j in pairs:
            keep, absorb = int(ids[i]), int(ids[j])
            out.labels[out.labels == absorb] = keep
            log.append(MergeEvent(float(threshold), rnd, keep, absorb, float(sim[i, j])))
        rnd += 1


def replay(p: Partition, log: list[MergeEvent]) -> Partition:
    out = p.copy()
    for ev in log:
        out.labels[out.labels == ev.absorbed] = ev.kept
    return out


def progressive_merge(emb: EmbeddingSet, p: Partition, descriptors: Descriptors,
                      steps: int = DEFAULT_STEPS, start: float | None = None
                      ) -> tuple[Partition, list[MergeEvent]]:
    """Run :func:`merge_pass` over the schedule from ``start`` down to cmd.

    ``start`` defaults to the largest current inter-centroid similarity; when
    that does not exceed cmd nothing qualifies and the partition is returned
    unchanged (re-densified).
    """
    cmd = descriptors.cmd
    if start is None:
        if p.num_clusters < 2:
            return p.densified(), []
        _, sim = centroid_similarity(emb, p)
        np.fill_diagonal(sim, -np.inf)
        start = float(sim.max())
    if start <= cmd:
        return p.densified(), []
    out, log = p, []
    for threshold in merge_schedule(start, cmd, steps):
        out, events = merge_pass(emb, out, threshold)
        log.extend(events)
    return out.densified(), log


def save_merge_log(log: list[MergeEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold\tround\tkept\tabsorbed\tsimilarity\n")
        for ev in log:
            fh.write(f"{ev.threshold!r}\t{ev.round}\t{ev.kept}\t{ev.absorbed}\t{ev.similarity!r}\n")


def load_merge_log(path) -> list[MergeEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            t, r, k, a, s = line.rstrip("\n").split("\t")
            out.append(MergeEvent(float(t), int(r), int(k), int(a), float(s)))
    return out

