"""Deterministic synthetic speaker embeddings with known labels.

Each speaker gets a random unit mean.  A sample is ``normalize(mean + noise)``
with isotropic Gaussian noise of per-coordinate std ``1 / sqrt(concentration)``,
so ``concentration=inf`` yields identical samples per speaker.

Two kinds of label noise are planted:

* outliers: a fraction of samples is drawn around another speaker's mean with
  ``outlier_spread`` times the usual noise, keeping its true label;
* splits: a fraction of speakers has two modes at cosine ``split_cosine`` from
  each other, and half of that speaker's samples go to each mode.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .embedstore import EmbeddingSet, LabeledSubset


@dataclass(frozen=True)
class SynthSpec:
    speakers: int = 200
    utterances: int = 20
    dim: int = 64
    concentration: float = 160.0
    outlier_rate: float = 0.05
    split_rate: float = 0.15
    split_cosine: float = 0.75
    outlier_spread: float = 3.0
    seed: int = 42

    def with_(self, **kw) -> "SynthSpec":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


TABLE1_DESK = SynthSpec()


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _noise_std(spec: SynthSpec) -> float:
    return 0.0 if math.isinf(spec.concentration) else 1.0 / math.sqrt(spec.concentration)


def _mode_pair(mean: np.ndarray, cosine: float, rng) -> np.ndarray:
    """Two unit vectors symmetric about ``mean`` whose mutual cosine is ``cosine``."""
    r = rng.standard_normal(mean.shape)
    r = _unit(r - (r @ mean) * mean)
    half = math.acos(max(-1.0, min(1.0, cosine))) / 2
    return np.stack([math.cos(half) * mean + math.sin(half) * r,
                     math.cos(half) * mean - math.sin(half) * r])


def generate(spec: SynthSpec = TABLE1_DESK) -> tuple[EmbeddingSet, LabeledSubset]:
    if spec.speakers < 2 or spec.dim < 2:
        raise ValueError("need speakers >= 2 and dim >= 2")
    if spec.utterances < 1:
        raise ValueError("need utterances >= 1")
    for name in ("outlier_rate", "split_rate"):
        rate = getattr(spec, name)
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(spec.seed)
    means = _unit(rng.standard_normal((spec.speakers, spec.dim)))
    n_split = int(round(spec.split_rate * spec.speakers))
    split = rng.permutation(spec.speakers)[:n_split]
    modes = {int(s): _mode_pair(means[s], spec.split_cosine, rng) for s in np.sort(split)}

    labels = np.repeat(np.arange(spec.speakers), spec.utterances)
    n = labels.size
    centers = means[labels].copy()
    for s, pair in modes.items():
        rows = np.flatnonzero(labels == s)
        centers[rows] = pair[rng.permutation(rows.size) % 2]

    std = np.full(n, _noise_std(spec))
    n_out = int(round(spec.outlier_rate * n))
    outliers = np.sort(rng.permutation(n)[:n_out])
    if spec.speakers > 1 and n_out:
        other = (labels[outliers] + rng.integers(1, spec.speakers, n_out)) % spec.speakers
        centers[outliers] = means[other]
        std[outliers] *= spec.outlier_spread

    vectors = _unit(centers + std[:, None] * rng.standard_normal((n, spec.dim)))
    utt = np.concatenate([np.arange(spec.utterances)] * spec.speakers)
    ids = [f"spk{s:04d}-utt{u:03d}" for s, u in zip(labels, utt)]
    names = tuple(f"spk{s:04d}" for s in range(spec.speakers))
    emb = EmbeddingSet(ids, vectors).normalize()
    return emb, LabeledSubset(tuple(ids), labels.astype(np.int64), names)


def sample_labeled_subset(emb: EmbeddingSet, truth: LabeledSubset, speakers: int,
                          per_speaker: int, seed: int = 0) -> LabeledSubset:
    """``speakers`` random classes with ``per_speaker`` random utterances each."""
    rng = np.random.default_rng(seed)
    sizes = truth.class_sizes
    eligible = np.flatnonzero(sizes >= per_speaker)
    if speakers > eligible.size:
        raise ValueError(f"only {eligible.size} classes have >= {per_speaker} utterances")
    chosen = np.sort(rng.choice(eligible, size=speakers, replace=False))
    pairs = []
    for c in chosen:
        rows = np.flatnonzero(truth.labels == c)
        for r in np.sort(rng.choice(rows, size=per_speaker, replace=False)):
            pairs.append((truth.ids[r], truth.class_names[c]))
    return LabeledSubset.from_pairs(pairs)


def truth_array(emb: EmbeddingSet, truth: LabeledSubset) -> np.ndarray:
    """Ground-truth class per row of ``emb`` (-1 when unknown)."""
    out = np.full(emb.n, -1, dtype=np.int64)
    for uid, c in zip(truth.ids, truth.labels):
        if uid in emb:
            out[emb.index_of(uid)] = c
    return out
