"""Embedding sets, labeled subsets and partitions, plus their file formats.

Formats
-------
EMB1 binary
    ``b"EMB1"``, little-endian ``u32`` count, little-endian ``u32`` dim, then
    ``count * dim`` little-endian float32 values.  Utterance ids live in a
    sidecar manifest ``<path>.ids`` (one id per line, same order).
CSV
    ``id,v1,...,vd`` per line, no header.
Labels TSV
    ``utterance-id <TAB> class-name``.
Partition TSV
    ``utterance-id <TAB> pseudo-label``; removed nodes are omitted.
Duration TSV
    ``utterance-id <TAB> seconds``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
REMOVED = -1


class EmbeddingFormatError(ValueError):
    pass


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows.

    Rows whose norm is already within a few ulps of 1 are left untouched, which
    makes the operation idempotent bit-for-bit.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise EmbeddingFormatError(f"zero-norm vector at row {int(zero[0])}")
    done = np.abs(norms - 1.0) <= 4 * np.finfo(np.float64).eps
    out = x / np.where(done, 1.0, norms)[:, None]
    out[done] = x[done]
    return out


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple[str, ...]
    vectors: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise EmbeddingFormatError("vectors must be a 2-D matrix")
        if len(self.ids) != vectors.shape[0]:
            raise EmbeddingFormatError(
                f"{len(self.ids)} ids for {vectors.shape[0]} vectors")
        seen: dict[str, int] = {}
        for i, uid in enumerate(self.ids):
            if uid in seen:
                raise EmbeddingFormatError(
                    f"duplicate id {uid!r} at rows {seen[uid]} and {i}")
            seen[uid] = i
        vectors.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", seen)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, uid: str) -> int:
        return self._index[uid]

    def __contains__(self, uid: str) -> bool:
        return uid in self._index

    def normalize(self) -> "EmbeddingSet":
        if self.n == 0:
            return EmbeddingSet(self.ids, self.vectors, normalized=True)
        return EmbeddingSet(self.ids, normalize_rows(self.vectors), normalized=True)

    def subset(self, rows) -> "EmbeddingSet":
        rows = np.asarray(rows, dtype=np.int64)
        return EmbeddingSet([self.ids[r] for r in rows], self.vectors[rows],
                            normalized=self.normalized)


@dataclass(frozen=True)
class LabeledSubset:
    """Ground-truth class ids for a subset of utterances.

    ``labels[i]`` is the dense class id of ``ids[i]``; ``class_names[c]`` is
    the original name of class ``c`` (first-appearance order).
    """
    ids: tuple[str, ...]
    labels: np.ndarray
    class_names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def class_members(self) -> dict[int, list[str]]:
        members: dict[int, list[str]] = {c: [] for c in range(self.num_classes)}
        for uid, c in zip(self.ids, self.labels):
            members[int(c)].append(uid)
        return members

    def label_of(self, uid: str) -> int:
        return int(self.labels[self.ids.index(uid)])

    def rows_in(self, emb: EmbeddingSet) -> np.ndarray:
        """Row indices of the labeled ids inside ``emb``."""
        missing = [uid for uid in self.ids if uid not in emb]
        if missing:
            raise EmbeddingFormatError(
                f"{len(missing)} labeled ids absent from embeddings, e.g. {missing[0]!r}")
        return np.array([emb.index_of(uid) for uid in self.ids], dtype=np.int64)

    @classmethod
    def from_pairs(cls, pairs) -> "LabeledSubset":
        ids, labels, names = [], [], {}
        for uid, name in pairs:
            ids.append(uid)
            labels.append(names.setdefault(name, len(names)))
        if len(set(ids)) != len(ids):
            raise EmbeddingFormatError("duplicate id in labels")
        return cls(tuple(ids), np.array(labels, dtype=np.int64), tuple(names))


@dataclass
class Partition:
    """Cluster assignment of node indices; ``REMOVED`` (-1) marks dropped nodes."""
    labels: np.ndarray
    removed_at: list = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).copy()
        if self.removed_at is None:
            self.removed_at = [None] * len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def num_clusters(self) -> int:
        kept = self.labels[self.labels != REMOVED]
        return int(np.unique(kept).size)

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.labels != REMOVED)

    @property
    def cluster_members(self) -> dict[int, np.ndarray]:
        kept = self.kept
        order = np.argsort(self.labels[kept], kind="stable")
        idx = kept[order]
        labs = self.labels[idx]
        cuts = np.flatnonzero(np.diff(labs)) + 1
        return {int(group[0]): members
                for group, members in zip(np.split(labs, cuts), np.split(idx, cuts))
                if group.size}

    def sizes(self) -> np.ndarray:
        kept = self.labels[self.labels != REMOVED]
        return np.bincount(kept) if kept.size else np.zeros(0, dtype=np.int64)

    def is_dense(self) -> bool:
        kept = self.labels[self.labels != REMOVED]
        return kept.size == 0 or np.array_equal(np.unique(kept), np.arange(kept.max() + 1))

    def copy(self) -> "Partition":
        return Partition(self.labels.copy(), list(self.removed_at))

    def remove(self, nodes, stage: str) -> "Partition":
        out = self.copy()
        for u in np.asarray(nodes, dtype=np.int64):
            if out.labels[u] != REMOVED:
                out.labels[u] = REMOVED
                out.removed_at[u] = stage
        return out

    def densified(self) -> "Partition":
        """Renumber surviving clusters 0..C-1 by ascending old id."""
        out = self.copy()
        mask = out.labels != REMOVED
        if mask.any():
            _, out.labels[mask] = np.unique(out.labels[mask], return_inverse=True)
        return out


def _read_durations(path) -> dict[str, float]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if row:
                out[row[0]] = float(row[1])
    return out


def _drop_short(ids, vectors, durations, min_duration):
    if durations is None:
        return ids, vectors
    if not isinstance(durations, dict):
        durations = _read_durations(durations)
    keep = [i for i, uid in enumerate(ids) if durations.get(uid, np.inf) >= min_duration]
    return [ids[i] for i in keep], vectors[keep]


def load_embeddings(path, format: str | None = None, durations=None,
                    min_duration: float = 1.0) -> EmbeddingSet:
    """Load an EMB1 or CSV embedding file and L2-normalize its rows.

    If ``durations`` (a mapping or a duration TSV path) is given, utterances
    shorter than ``min_duration`` seconds are dropped before validation.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        ids, vectors = _read_emb1(path)
    elif format == "csv":
        ids, vectors = _read_csv(path)
    else:
        raise ValueError(f"unknown embedding format {format!r}")
    ids, vectors = _drop_short(ids, vectors, durations, min_duration)
    return EmbeddingSet(ids, vectors).normalize()


def _read_emb1(path: Path):
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise EmbeddingFormatError(f"{path}: missing EMB1 magic")
    count, dim = struct.unpack("<II", raw[4:12])
    if count and dim == 0:
        raise EmbeddingFormatError(f"{path}: zero dimension")
    expected = 12 + 4 * count * dim
    if len(raw) != expected:
        raise EmbeddingFormatError(
            f"{path}: expected {expected} bytes for {count}x{dim}, got {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim).astype(np.float64)
    ids = Path(str(path) + ".ids").read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise EmbeddingFormatError(f"{path}: {len(ids)} ids for {count} vectors")
    return ids, vectors


def _read_csv(path: Path):
    ids, rows, dim = [], [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            values = [float(v) for v in row[1:]]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: dimension {len(values)} != {dim}")
            ids.append(row[0])
            rows.append(values)
    if dim == 0:
        raise EmbeddingFormatError(f"{path}: rows carry no values")
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0)


def save_embeddings(emb: EmbeddingSet, path, format: str = "binary") -> None:
    path = Path(path)
    if format == "binary":
        header = MAGIC + struct.pack("<II", emb.n, emb.dim)
        path.write_bytes(header + emb.vectors.astype("<f4").tobytes())
        Path(str(path) + ".ids").write_text(
            "".join(uid + "\n" for uid in emb.ids), encoding="utf-8")
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for uid, row in zip(emb.ids, emb.vectors):
                writer.writerow([uid, *(repr(float(v)) for v in row)])
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def load_labels(path, emb: EmbeddingSet | None = None) -> LabeledSubset:
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise EmbeddingFormatError(f"{path}: empty label file")
    labels = LabeledSubset.from_pairs(pairs)
    if emb is not None:
        labels.rows_in(emb)
    return labels


def save_labels(labels: LabeledSubset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for uid, c in zip(labels.ids, labels.labels):
            fh.write(f"{uid}\t{labels.class_names[c]}\n")


def save_partition(p: Partition, emb: EmbeddingSet, path) -> None:
    if p.n != emb.n:
        raise ValueError(f"partition has {p.n} nodes, embeddings {emb.n}")
    rows = sorted((emb.ids[u], int(c)) for u, c in enumerate(p.labels) if c != REMOVED)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{uid}\t{c}\n" for uid, c in rows)


def load_partition(path, emb: EmbeddingSet) -> Partition:
    labels = np.full(emb.n, REMOVED, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            uid, lab = line.split("\t")
            if uid not in emb:
                raise EmbeddingFormatError(f"{path}:{lineno}: unknown id {uid!r}")
            labels[emb.index_of(uid)] = int(lab)
    return Partition(labels)
