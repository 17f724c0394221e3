import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mopc.descriptors import (DescriptorUndefined, Descriptors, compute_centroids, compute_cmd,
                              compute_descriptors, compute_icd, compute_ned)
from mopc.embedstore import EmbeddingSet, LabeledSubset


def make(rows, labels):
    ids = [f"u{i}" for i in range(len(rows))]
    names = sorted(set(labels))
    lab = LabeledSubset(tuple(ids), np.array([names.index(v) for v in labels]), tuple(names))
    return EmbeddingSet(ids, np.asarray(rows, dtype=float)), lab


def test_ned_example():
    emb, lab = make([(1, 0), (0.8, 0.6), (0, 1)], ["A", "A", "B"])
    assert compute_ned(emb, lab) == pytest.approx(0.6, abs=1e-15)


def test_ned_duplicate_across_classes():
    emb, lab = make([(1, 0), (1, 0), (0, 1)], ["A", "B", "B"])
    assert compute_ned(emb, lab) == 1.0


def test_single_class_is_undefined():
    emb, lab = make([(1, 0), (0, 1)], ["A", "A"])
    with pytest.raises(DescriptorUndefined):
        compute_ned(emb, lab)
    with pytest.raises(DescriptorUndefined):
        compute_cmd(compute_centroids(emb, lab))


def test_centroids():
    emb, lab = make([(1, 0), (0, 1), (0, 1)], ["A", "A", "B"])
    np.testing.assert_array_equal(compute_centroids(emb, lab), [[0.5, 0.5], [0.0, 1.0]])


def test_icd_example():
    emb, lab = make([(1, 0), (0, 1), (0, 1)], ["A", "A", "B"])
    assert compute_icd(emb, lab) == 1.0
    emb, lab = make([(1, 0), (0, 1)], ["A", "A"])
    assert compute_icd(emb, lab) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)


def test_icd_singletons():
    emb, lab = make(np.eye(3), ["A", "B", "C"])
    assert compute_icd(emb, lab) == 1.0


def test_cmd_examples():
    assert compute_cmd(np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0
    assert compute_cmd(np.array([[0.3, 0.4], [0.3, 0.4], [1.0, 0.0]])) == 1.0


def test_text_round_trip():
    d = Descriptors(0.123456789012345, -0.5, 1.0)
    assert Descriptors.from_text(d.to_text()) == d


def random_fixture(seed, n=60, d=8, classes=5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.concatenate([np.arange(classes), rng.integers(0, classes, n - classes)])
    return x, y


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_random_fixtures_match_oracles(seed):
    x, y = random_fixture(seed)
    emb, lab = make(x, y.tolist())
    got = compute_descriptors(emb, lab)
    assert (got.ned, got.icd, got.cmd) == (oracles.ned(x, y), oracles.icd(x, y), oracles.cmd(x, y))
    np.testing.assert_allclose(compute_centroids(emb, lab),
                               np.array(list(oracles.centroids(x, y).values())), atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_dyadic_ned_is_exact(seed):
    rng = np.random.default_rng(seed)
    x = oracles.dyadic_unit_vectors(rng, 40, 16)
    y = rng.integers(0, 4, 40)
    y[:4] = np.arange(4)
    emb, lab = make(x, y.tolist())
    assert compute_ned(emb, lab) == oracles.ned(x, y)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    x, y = random_fixture(seed)
    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(len(x))
    relabel = rng.permutation(y.max() + 1)
    a = compute_descriptors(*make(x, y.tolist()))
    b = compute_descriptors(*make(x[order], relabel[y[order]].tolist()))
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_duplicate_sample_keeps_ned(seed):
    x, y = random_fixture(seed)
    i = seed % len(x)
    emb, lab = make(x, y.tolist())
    emb2, lab2 = make(np.vstack([x, x[i]]), y.tolist() + [int(y[i])])
    assert compute_ned(emb2, lab2) == compute_ned(emb, lab)
