"""Acceptance gate.  Each test records one pass/fail line (see conftest)."""
import hashlib
import math
import os
import shutil
import subprocess
import sys
import time

import numpy as np

import oracles
from conftest import TABLE1_CONFIG
from mopc import infomap, metrics, pipeline, subcenter
from mopc.descriptors import compute_descriptors
from mopc.embedstore import EmbeddingSet, LabeledSubset, Partition
from mopc.graph import SimilarityGraph, build_knn
from mopc.synthgen import TABLE1_DESK, generate

# tolerances
DESCRIPTOR_BUDGET_S = 10.0
INFOMAP_GRAPHS = 500
INFOMAP_GAP = 0.02
INFOMAP_MATCH = 0.90
INFOMAP_BUDGET_S = 60.0
ENTROPY_TOL = 1e-9
GRAD_TOL = 1e-3
PURITY_SEEDS = 20
PURITY_DISCRIMINATE = 19
PURITY_EXACT = 18
PURITY_TAU = 0.7
MERGE_NR2_DROP = 0.25
TABLE1_BUDGET_S = 300.0
METRIC_TOL = 1e-9
METRIC_CASES = 100


def _labeled(rng, n, classes):
    y = np.concatenate([np.arange(classes), rng.integers(0, classes, n - classes)])
    rng.shuffle(y)
    ids = [f"u{i}" for i in range(n)]
    return ids, y, LabeledSubset(tuple(ids), y.astype(np.int64), tuple(f"c{c}" for c in range(classes)))


def test_descriptor_oracles(criterion):
    rng = np.random.default_rng(2024)
    elapsed, mismatches = 0.0, 0
    for trial in range(200):
        n = int(rng.integers(4, 501))
        classes = int(rng.integers(2, min(n, 30) + 1))
        if trial % 2 == 0:
            x = oracles.dyadic_unit_vectors(rng, n, 64)
        else:
            d = int(rng.integers(2, 65))
            x = rng.standard_normal((n, d))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
        ids, y, lab = _labeled(rng, n, classes)
        emb = EmbeddingSet(ids, x)
        t0 = time.perf_counter()
        got = compute_descriptors(emb, lab)
        elapsed += time.perf_counter() - t0
        want = (oracles.ned(x, y), oracles.icd(x, y), oracles.cmd(x, y))
        mismatches += (got.ned, got.icd, got.cmd) != want
    ok = mismatches == 0 and elapsed < DESCRIPTOR_BUDGET_S
    criterion(1, ok, f"200 fixtures, {mismatches} not bit-identical to the oracle, {elapsed:.2f}s")
    assert ok


def test_infomap_against_exhaustive(criterion):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    gaps, matches = [], 0
    for i in range(INFOMAP_GRAPHS):
        adj = oracles.planted_graph(rng) if i % 2 else oracles.random_connected_graph(rng)
        src, dst, w = oracles.edges_of(adj)
        f = infomap.to_flow(SimilarityGraph(len(adj), src, dst, w))
        p = infomap.cluster(f, seed=i)
        length = infomap.map_equation(f, p).codelength
        best, best_labels = oracles.exhaustive_best(adj)
        gaps.append((length - best) / best)
        matches += oracles.canonical(p.labels) == oracles.canonical(best_labels)
    # disjoint unions of connected pieces must come back split along components
    split_ok = True
    for i in range(50):
        pieces = [oracles.random_connected_graph(rng, 2, 4) for _ in range(int(rng.integers(2, 4)))]
        n = sum(len(a) for a in pieces)
        adj = np.zeros((n, n))
        comp, at = np.zeros(n, dtype=np.int64), 0
        for c, a in enumerate(pieces):
            adj[at:at + len(a), at:at + len(a)] = a
            comp[at:at + len(a)] = c
            at += len(a)
        src, dst, w = oracles.edges_of(adj)
        p = infomap.cluster(infomap.to_flow(SimilarityGraph(n, src, dst, w)), seed=i)
        split_ok &= all(len(set(comp[p.labels == m])) == 1 for m in np.unique(p.labels))
    elapsed = time.perf_counter() - t0
    rate = matches / INFOMAP_GRAPHS
    ok = max(gaps) <= INFOMAP_GAP and rate >= INFOMAP_MATCH and split_ok and elapsed < INFOMAP_BUDGET_S
    criterion(2, ok, f"max gap {max(gaps):.2e}, exact match {rate:.1%}, "
                     f"components separated {split_ok}, {elapsed:.1f}s")
    assert ok


def test_single_module_codelength_is_flow_entropy(criterion):
    rng = np.random.default_rng(11)
    flows = []
    for _ in range(200):
        adj = oracles.random_connected_graph(rng, 2, 12)
        flows.append(infomap.to_flow(SimilarityGraph(len(adj), *oracles.edges_of(adj))))
    emb, _ = generate(TABLE1_DESK.with_(speakers=30))
    flows.append(infomap.to_flow(build_knn(emb, 10)))
    worst = 0.0
    for f in flows:
        score = infomap.map_equation(f, np.zeros(f.n, dtype=np.int64))
        pu = f.node_flow[f.node_flow > 0]
        entropy = -math.fsum(pu * np.log2(pu))
        worst = max(worst, abs(score.codelength - entropy), abs(score.index_codelength))
    ok = worst <= ENTROPY_TOL
    criterion(3, ok, f"{len(flows)} fixtures, max |L - H(p)| {worst:.1e}")
    assert ok


def _fd_gradient(weights, x, y, margin, scale, h=1e-6):
    grad = np.zeros_like(weights)
    it = np.nditer(weights, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, down = weights.copy(), weights.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (subcenter.loss_and_grad(up, x, y, margin, scale)[0]
                     - subcenter.loss_and_grad(down, x, y, margin, scale)[0]) / (2 * h)
    return grad


def test_subcenter_gradient_check(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for subcenters in (1, 3):
        for margin in (0.0, 0.2):
            for _ in range(10):
                classes, dim, n = 4, 6, 12
                x = rng.standard_normal((n, dim))
                x /= np.linalg.norm(x, axis=1, keepdims=True)
                y = rng.integers(0, classes, n)
                w = rng.standard_normal((classes, subcenters, dim))
                w /= np.linalg.norm(w, axis=2, keepdims=True)
                _, analytic = subcenter.loss_and_grad(w, x, y, margin, 8.0)
                numeric = _fd_gradient(w, x, y, margin, 8.0)
                rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
                worst = max(worst, rel)
    ok = worst < GRAD_TOL
    criterion(4, ok, f"40 points over S in (1,3), margin in (0,0.2): max rel err {worst:.1e}")
    assert ok


def purity_fixture(seed, pure=6, per=40, dim=32, concentration=100.0):
    """``pure`` single-speaker clusters plus one cluster holding two speakers (the last id)."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((pure + 2, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    speaker = np.concatenate([np.repeat(np.arange(pure), per), np.repeat([pure, pure + 1], per // 2)])
    x = means[speaker] + rng.standard_normal((len(speaker), dim)) / math.sqrt(concentration)
    emb = EmbeddingSet([f"u{i}" for i in range(len(speaker))], x).normalize()
    return emb, Partition(np.minimum(speaker, pure))


def test_purity_discrimination(criterion):
    discriminated = exact = 0
    for seed in range(PURITY_SEEDS):
        emb, p = purity_fixture(seed)
        model = subcenter.train(emb, p, seed=seed)
        rep = subcenter.purity_report(model, emb, p)
        impure = p.labels.max()
        discriminated += rep.dominance[impure] < rep.dominance[:impure].min()
        _, purged = subcenter.purge_impure(p, rep, PURITY_TAU)
        exact += purged == [impure]
    ok = discriminated >= PURITY_DISCRIMINATE and exact >= PURITY_EXACT
    criterion(5, ok, f"impure < pure in {discriminated}/{PURITY_SEEDS}, "
                     f"exact purge in {exact}/{PURITY_SEEDS}")
    assert ok


def test_table1_desk_directions(criterion, table1_run):
    result, elapsed = table1_run
    rep = dict(result.reports)
    base, ned, icd = rep[pipeline.BASED], rep[pipeline.NED], rep[pipeline.ICD]
    pre, final = rep[pipeline.SUBCENTER], rep[pipeline.CMD]
    a = ned.nr1 < base.nr1 and ned.nr2 < base.nr2
    b = icd.nr1 <= ned.nr1
    drop = (pre.nr2 - final.nr2) / pre.nr2 if pre.nr2 > 0 else 0.0
    c = drop >= MERGE_NR2_DROP and final.nmi >= base.nmi
    fast = elapsed < TABLE1_BUDGET_S
    ok = a and b and c and fast
    criterion(6, ok, f"(a) NR1 {base.nr1:.2f}->{ned.nr1:.2f}, NR2 {base.nr2:.2f}->{ned.nr2:.2f}; "
                     f"(b) NR1 {ned.nr1:.2f}->{icd.nr1:.2f}; (c) NR2 {pre.nr2:.2f}->{final.nr2:.2f} "
                     f"({drop:.0%} drop), NMI {base.nmi:.4f}->{final.nmi:.4f}; {elapsed:.1f}s")
    assert a, "NED must lower both noise rates"
    assert b, "ICD must not raise NR1"
    assert c, "merging must cut NR2 by a quarter without losing NMI"
    assert fast


def _random_pair(rng):
    n = int(rng.integers(2, 60))
    truth = rng.integers(0, int(rng.integers(1, 8)), n)
    kind = rng.integers(0, 3)
    if kind == 0:  # a relabelling of the truth
        perm = rng.permutation(truth.max() + 1) + int(rng.integers(0, 5))
        pred = perm[truth]
    elif kind == 1:
        pred = rng.integers(0, int(rng.integers(1, 8)), n)
    else:  # truth with a few nodes moved
        pred = truth.copy()
        moved = rng.random(n) < 0.2
        pred[moved] = rng.integers(0, 8, moved.sum())
    removed = rng.random(n) < 0.15
    removed[int(rng.integers(0, n))] = False
    pred = np.where(removed, -1, pred)
    return pred, truth


def test_metric_identities(criterion):
    rng = np.random.default_rng(5)
    worst, iff_ok = 0.0, True
    for _ in range(METRIC_CASES):
        pred, truth = _random_pair(rng)
        kept = pred != -1
        got = metrics.report(pred, truth)
        worst = max(worst, abs(got.nr1 - oracles.nr1(pred, truth)),
                    abs(got.nr2 - oracles.nr2(pred, truth)),
                    abs(got.nmi - oracles.nmi(pred, truth)))
        worst = max(worst, abs(metrics.nmi(pred, pred) - 1.0))
        worst = max(worst, abs(metrics.nmi(pred[kept], truth[kept]) - metrics.nmi(truth[kept], pred[kept])))
        zero = got.nr1 == 0 and got.nr2 == 0
        iff_ok &= zero == oracles.relabel_equivalent(pred, truth)
    ok = worst <= METRIC_TOL and iff_ok
    criterion(7, ok, f"{METRIC_CASES} partitions, max |diff| {worst:.1e}, "
                     f"zero-noise iff relabelling: {iff_ok}")
    assert ok


def _tree_digest(root) -> dict[str, str]:
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_cli_runs_are_byte_identical(criterion, tmp_path):
    out = tmp_path / "run"
    cmd = [sys.executable, "-m", "mopc.cli", "run", "--config", str(TABLE1_CONFIG),
           "--output", str(out)]
    digests = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        subprocess.run(cmd, check=True, capture_output=True)
        digests.append(_tree_digest(out))
    ok = digests[0] == digests[1] and len(digests[0]) > 5
    criterion(8, ok, f"{len(digests[0])} files, identical hashes: {digests[0] == digests[1]}")
    assert ok


def test_kmeans_baseline_is_worse(criterion, table1_run):
    from sklearn.cluster import KMeans

    result, _ = table1_run
    truth = result.truth
    k = int(np.unique(truth).size)
    km = KMeans(n_clusters=k, n_init=10, random_state=42).fit_predict(result.pool.vectors)
    baseline = metrics.nmi(km, truth)
    ours = dict(result.reports)[pipeline.CMD].nmi
    ok = baseline < ours
    criterion(9, ok, f"k-means (k={k}) NMI {baseline:.4f} vs pipeline {ours:.4f}")
    assert ok
