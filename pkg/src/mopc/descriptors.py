"""Domain descriptors derived from the small labeled subset.

ned
    largest cosine between two labeled embeddings of different classes;
    graph edges at or below it are treated as noise.
icd
    for each class the smallest member-to-centroid cosine, maximised over
    classes; cluster members at or below it are treated as intra-class noise.
cmd
    largest cosine between two class centroids; the last threshold of the
    progressive merge schedule.

Results do not depend on sample or class order: sums behind the reported
values are correctly rounded (``math.fsum``), and the fast matrix products
only shortlist candidates within ``_SHORTLIST`` of the extreme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedstore import EmbeddingSet, LabeledSubset

_BLOCK = 2048
_SHORTLIST = 1e-9  # far above the rounding error of a float64 dot product of unit vectors


class DescriptorUndefined(ValueError):
    pass


@dataclass(frozen=True)
class Descriptors:
    ned: float
    icd: float
    cmd: float

    def to_text(self) -> str:
        return f"ned={self.ned!r}\nicd={self.icd!r}\ncmd={self.cmd!r}\n"

    @classmethod
    def from_text(cls, text: str) -> "Descriptors":
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                values[key.strip()] = float(value)
        return cls(values["ned"], values["icd"], values["cmd"])


def _clip(value) -> float:
    return float(min(1.0, max(-1.0, value)))


def _labeled_matrix(emb: EmbeddingSet, labels: LabeledSubset):
    x = emb.vectors[labels.rows_in(emb)]
    return x, labels.labels


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return math.fsum(a * b)


def compute_ned(emb: EmbeddingSet, labels: LabeledSubset) -> float:
    x, y = _labeled_matrix(emb, labels)
    if np.unique(y).size < 2:
        raise DescriptorUndefined("ned needs at least two labeled classes")
    best, shortlist = -np.inf, []
    for start in range(0, len(x), _BLOCK):
        block = x[start:start + _BLOCK] @ x.T
        block[y[start:start + _BLOCK, None] == y[None, :]] = -np.inf
        best = max(best, float(block.max()))
        rows, cols = np.nonzero(block >= best - _SHORTLIST)
        shortlist += zip(block[rows, cols].tolist(), (rows + start).tolist(), cols.tolist())
    return _clip(max(_dot(x[i], x[j]) for v, i, j in shortlist if v >= best - _SHORTLIST))


def compute_centroids(emb: EmbeddingSet, labels: LabeledSubset) -> np.ndarray:
    """Arithmetic mean of each class's embeddings, row ``c`` for class ``c``."""
    x, y = _labeled_matrix(emb, labels)
    out = np.zeros((labels.num_classes, x.shape[1]))
    for c in range(labels.num_classes):
        members = x[y == c]
        if len(members):
            out[c] = [math.fsum(col) for col in members.T]
            out[c] /= len(members)
    return out


def _unit(c: np.ndarray) -> np.ndarray:
    c = np.atleast_2d(c)
    norms = np.array([math.sqrt(math.fsum(row * row)) for row in c])
    return c / norms[:, None]


def compute_icd(emb: EmbeddingSet, labels: LabeledSubset,
                centroids: np.ndarray | None = None) -> float:
    x, y = _labeled_matrix(emb, labels)
    if centroids is None:
        centroids = compute_centroids(emb, labels)
    unit = _unit(centroids)
    cos = np.einsum("ij,ij->i", x, unit[y])
    rough = np.full(labels.num_classes, np.inf)
    np.minimum.at(rough, y, cos)
    per_class = []
    for c in np.flatnonzero(np.isfinite(rough)):
        near = np.flatnonzero((y == c) & (cos <= rough[c] + _SHORTLIST))
        per_class.append(min(_dot(x[i], unit[c]) for i in near))
    return _clip(max(per_class))


def compute_cmd(centroids: np.ndarray) -> float:
    if len(centroids) < 2:
        raise DescriptorUndefined("cmd needs at least two classes")
    u = _unit(centroids)
    sim = u @ u.T
    np.fill_diagonal(sim, -np.inf)
    rows, cols = np.nonzero(np.triu(sim >= sim.max() - _SHORTLIST, 1))
    return _clip(max(_dot(u[i], u[j]) for i, j in zip(rows.tolist(), cols.tolist())))


def compute_descriptors(emb: EmbeddingSet, labels: LabeledSubset) -> Descriptors:
    centroids = compute_centroids(emb, labels)
    return Descriptors(
        ned=compute_ned(emb, labels),
        icd=compute_icd(emb, labels, centroids),
        cmd=compute_cmd(centroids),
    )
