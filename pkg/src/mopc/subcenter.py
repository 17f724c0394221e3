"""Sub-center additive-angular-margin classifier on frozen embeddings.

A class logit is ``scale * max_s <x, W[c, s]>``; for the target class the
angle gets the additive margin, ``scale * cos(theta + margin)``.  Only the
weights are trained, by full-batch gradient descent with hand-written
gradients (the max passes gradient to the selected sub-center only), and
every weight row is re-normalised after each step.

After training, a class whose members spread their sub-center choice over
several sub-centers is considered impure.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedstore import EmbeddingSet, Partition, normalize_rows

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SCW1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubcenterParams:
    subcenters: int = 3
    margin: float = 0.2
    scale: float = 32.0
    lr: float = 0.1
    max_epochs: int = 200
    tol: float = 1e-4
    batch_size: int = 50_000
    tau: float = 0.7


@dataclass
class SubcenterModel:
    weights: np.ndarray  # (classes, subcenters, dim)
    margin: float
    scale: float
    losses: list[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def subcenters(self) -> int:
        return self.weights.shape[1]

    def cosines(self, x: np.ndarray) -> np.ndarray:
        """``(n, classes, subcenters)`` inner products."""
        return np.einsum("nd,csd->ncs", x, self.weights)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.cosines(x).max(axis=2), axis=1)


def _margin_target(t: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """``cos(arccos(t) + margin)`` and its derivative in ``t``.

    Past ``theta = pi - margin`` the penalised cosine would stop decreasing, so
    it continues linearly as ``t - sin(pi - margin) * margin`` instead.
    """
    if margin == 0:
        return t.copy(), np.ones_like(t)
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    threshold = math.cos(math.pi - margin)
    sin_t = np.sqrt(np.clip(1.0 - t * t, 1e-12, None))
    phi = t * cos_m - sin_t * sin_m
    dphi = cos_m + t * sin_m / sin_t
    linear = t <= threshold
    phi = np.where(linear, t - math.sin(math.pi - margin) * margin, phi)
    dphi = np.where(linear, 1.0, dphi)
    return phi, dphi


def loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray,
                  margin: float, scale: float) -> tuple[float, np.ndarray]:
    """Mean sub-center margin cross-entropy and its gradient w.r.t. ``weights``."""
    n = len(x)
    cos = np.einsum("nd,csd->ncs", x, weights)
    sel = np.argmax(cos, axis=2)  # ties -> lower sub-center
    best = np.take_along_axis(cos, sel[:, :, None], axis=2)[:, :, 0]
    rows = np.arange(n)
    phi, dphi = _margin_target(best[rows, y], margin)
    logits = scale * best
    logits[rows, y] = scale * phi
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    total = exp.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(total[:, 0]) + shift[:, 0] - logits[rows, y]))
    coef = exp / total
    coef[rows, y] -= 1.0
    coef *= scale / n
    coef[rows, y] *= dphi
    grad = np.zeros_like(weights)
    for s in range(weights.shape[1]):
        grad[:, s, :] = np.where(sel == s, coef, 0.0).T @ x
    return loss, grad


def init_weights(x: np.ndarray, y: np.ndarray, classes: int, subcenters: int,
                 rng: np.random.Generator, jitter: float = 1e-3) -> np.ndarray:
    """Sub-center 0 at the class mean; the rest at farthest-point class members."""
    dim = x.shape[1]
    weights = np.empty((classes, subcenters, dim))
    for c in range(classes):
        members = x[y == c]
        mean = members.mean(axis=0)
        chosen = [mean / np.linalg.norm(mean)]
        for _ in range(1, subcenters):
            closeness = np.max(members @ np.array(chosen).T, axis=1)
            chosen.append(members[int(np.argmin(closeness))])
        weights[c] = np.array(chosen)
    weights += jitter * rng.standard_normal(weights.shape)
    return normalize_rows(weights.reshape(-1, dim)).reshape(weights.shape)


def _dense_labels(p: Partition) -> tuple[np.ndarray, np.ndarray]:
    if not p.is_dense():
        raise ValueError("partition must have dense cluster ids")
    kept = p.kept
    return kept, p.labels[kept]


def train(emb: EmbeddingSet, p: Partition, params: SubcenterParams = SubcenterParams(),
          seed: int = 42, weights: np.ndarray | None = None) -> SubcenterModel:
    kept, y = _dense_labels(p)
    classes = int(y.max()) + 1 if y.size else 0
    if classes < 2:
        raise TrainingError("sub-center training needs at least two clusters")
    x = emb.vectors[kept]
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = init_weights(x, y, classes, params.subcenters, rng)
    weights = weights.copy()
    lr = params.lr
    losses: list[float] = []
    batches = [np.arange(len(x))]
    for epoch in range(params.max_epochs):
        if len(x) > params.batch_size:
            order = rng.permutation(len(x))
            batches = [order[i:i + params.batch_size] for i in range(0, len(x), params.batch_size)]
        epoch_loss = 0.0
        for step, batch in enumerate(batches):
            loss, grad = loss_and_grad(weights, x[batch], y[batch], params.margin, params.scale)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            weights = normalize_rows((weights - lr * grad).reshape(-1, x.shape[1])).reshape(weights.shape)
            epoch_loss += loss * len(batch) / len(x)
        losses.append(epoch_loss)
        if len(losses) > 1:
            prev = losses[-2]
            if epoch_loss >= prev:
                lr *= 0.5
            elif (prev - epoch_loss) / max(abs(prev), 1e-12) < params.tol:
                break
        if lr < 1e-8:
            break
    log.debug("sub-center training: %d epochs, loss %.4g -> %.4g", len(losses),
              losses[0], losses[-1])
    return SubcenterModel(weights, params.margin, params.scale, losses)


@dataclass
class PurityReport:
    histogram: np.ndarray  # (classes, subcenters) member counts per selected sub-center
    dominance: np.ndarray  # (classes,)

    def rows(self):
        for c, (hist, dom) in enumerate(zip(self.histogram, self.dominance)):
            yield c, hist.tolist(), float(dom)


def purity_report(model: SubcenterModel, emb: EmbeddingSet, p: Partition) -> PurityReport:
    kept, y = _dense_labels(p)
    classes = int(y.max()) + 1 if y.size else 0
    if classes != model.num_classes:
        raise ValueError(f"model has {model.num_classes} classes, partition {classes}")
    own = np.einsum("nd,nsd->ns", emb.vectors[kept], model.weights[y])
    sel = np.argmax(own, axis=1)
    hist = np.zeros((classes, model.subcenters), dtype=np.int64)
    np.add.at(hist, (y, sel), 1)
    dominance = hist.max(axis=1) / hist.sum(axis=1)
    return PurityReport(hist, dominance)


def purge_impure(p: Partition, report: PurityReport, tau: float = 0.7,
                 stage: str = "subcenter") -> tuple[Partition, list[int]]:
    """Remove every class whose dominance is below ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    purged = np.flatnonzero(report.dominance < tau)
    drop = np.flatnonzero(np.isin(p.labels, purged))
    return p.remove(drop, stage).densified(), purged.tolist()


def save_model(model: SubcenterModel, path) -> None:
    c, s, d = model.weights.shape
    header = json.dumps({"classes": c, "subcenters": s, "dim": d, "margin": model.margin,
                         "scale": model.scale, "dtype": "<f8"}, sort_keys=True).encode()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header
                           + model.weights.astype("<f8").tobytes())


def load_model(path) -> SubcenterModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a sub-center checkpoint")
    (size,) = struct.unpack("<I", raw[4:8])
    meta = json.loads(raw[8:8 + size])
    weights = np.frombuffer(raw, dtype="<f8", offset=8 + size).reshape(
        meta["classes"], meta["subcenters"], meta["dim"]).copy()
    return SubcenterModel(weights, meta["margin"], meta["scale"])


def save_purity(report: PurityReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cluster\tdominance\thistogram\n")
        for c, hist, dom in report.rows():
            fh.write(f"{c}\t{dom:.6f}\t{','.join(map(str, hist))}\n")
