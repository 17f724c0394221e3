"""Pseudo-label quality against ground truth.

All metrics are computed over non-removed samples only.

nr1
    intra-class noise rate: percentage of samples that do not carry the
    majority ground-truth label of their pseudo cluster.
nr2
    inter-class noise rate: percentage of samples that fall outside the
    largest pseudo cluster of their ground-truth class.
nmi
    ``2 I(P; G) / (H(P) + H(G))`` with natural logarithms.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .embedstore import REMOVED, Partition

DEFINITIONS = (
    "nr1 = 100 * sum_clusters(size - majority_gt_count) / kept; "
    "nr2 = 100 * sum_gt_classes(size - largest_cluster_count) / kept; "
    "nmi = 2 I(P;G) / (H(P) + H(G)); removed samples excluded"
)


class EmptyPartition(ValueError):
    pass


def _labels(p) -> np.ndarray:
    return p.labels if isinstance(p, Partition) else np.asarray(p, dtype=np.int64)


def contingency(p, truth) -> np.ndarray:
    """Pseudo-cluster x ground-truth count table over non-removed samples."""
    labels, truth = _labels(p), np.asarray(truth, dtype=np.int64)
    kept = labels != REMOVED
    if not kept.any():
        raise EmptyPartition("no non-removed samples")
    if np.any(truth[kept] < 0):
        raise ValueError("ground truth missing for a non-removed sample")
    _, pi = np.unique(labels[kept], return_inverse=True)
    _, gi = np.unique(truth[kept], return_inverse=True)
    table = np.zeros((pi.max() + 1, gi.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, gi), 1)
    return table


def nr1(p, truth) -> float:
    table = contingency(p, truth)
    return 100.0 * float((table.sum(axis=1) - table.max(axis=1)).sum()) / float(table.sum())


def nr2(p, truth) -> float:
    table = contingency(p, truth)
    return 100.0 * float((table.sum(axis=0) - table.max(axis=0)).sum()) / float(table.sum())


def _entropy(counts: np.ndarray) -> float:
    pr = counts[counts > 0] / counts.sum()
    return float(-(pr * np.log(pr)).sum())


def nmi(p, truth) -> float:
    table = contingency(p, truth)
    h_p, h_g = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_p == 0.0 and h_g == 0.0:
        return 1.0
    if h_p == 0.0 or h_g == 0.0:
        return 0.0
    n = table.sum()
    nz = table > 0
    joint = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / n ** 2
    mi = float((joint * np.log(joint / outer)).sum())
    return float(min(1.0, max(0.0, 2.0 * mi / (h_p + h_g))))


@dataclass(frozen=True)
class QualityReport:
    nr1: float
    nr2: float
    pseudo_classes: int
    gt_classes_covered: int
    nmi: float
    removed_fraction: float

    def as_dict(self) -> dict:
        return asdict(self)


def report(p, truth) -> QualityReport:
    labels, truth = _labels(p), np.asarray(truth, dtype=np.int64)
    table = contingency(labels, truth)
    kept = labels != REMOVED
    return QualityReport(
        nr1=nr1(labels, truth),
        nr2=nr2(labels, truth),
        pseudo_classes=int(table.shape[0]),
        gt_classes_covered=int(table.shape[1]),
        nmi=nmi(labels, truth),
        removed_fraction=100.0 * float((~kept).sum()) / len(labels),
    )


REPORT_FIELDS = ("nr1", "nr2", "pseudo_classes", "gt_classes_covered", "nmi", "removed_fraction")


def format_tsv(rows: list[tuple[str, QualityReport]]) -> str:
    lines = ["stage\t" + "\t".join(REPORT_FIELDS)]
    for stage, r in rows:
        d = r.as_dict()
        lines.append(stage + "\t" + "\t".join(
            f"{d[k]:.4f}" if isinstance(d[k], float) else str(d[k]) for k in REPORT_FIELDS))
    return "\n".join(lines) + "\n"


def format_block(rows: list[tuple[str, QualityReport]]) -> str:
    head = f"{'stage':<14}{'NR1[%]':>9}{'NR2[%]':>9}{'Spk P':>8}{'Spk GT':>8}{'NMI':>9}{'removed[%]':>12}"
    out = [head]
    for stage, r in rows:
        out.append(f"{stage:<14}{r.nr1:>9.2f}{r.nr2:>9.2f}{r.pseudo_classes:>8d}"
                   f"{r.gt_classes_covered:>8d}{r.nmi:>9.4f}{r.removed_fraction:>12.2f}")
    out.append(DEFINITIONS)
    return "\n".join(out) + "\n"
