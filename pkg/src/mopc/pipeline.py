"""End-to-end pseudo-labeling run with per-stage snapshots and quality reports.

Stage names follow the ablation rows: ``Based`` (Infomap on the raw kNN
graph), ``+NED`` (Infomap after noise-edge pruning), ``++ICD`` (intra-class
cleaning and small-cluster removal), ``+++subcenter`` (impure-class purge)
and ``++++CMD`` (progressive merging).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as graph_mod
from . import infomap, merge, refine, subcenter, synthgen
from .config import PipelineConfig, dump_config
from .descriptors import Descriptors, compute_descriptors
from .embedstore import (REMOVED, EmbeddingSet, LabeledSubset, Partition, load_embeddings,
                         load_labels, save_embeddings, save_labels, save_partition)
from .metrics import QualityReport, format_block, format_tsv, report

log = logging.getLogger(__name__)

BASED, NED, ICD, SUBCENTER, CMD = "Based", "+NED", "++ICD", "+++subcenter", "++++CMD"

# 1 is left for unexpected errors and 2 for command-line usage errors
EXIT_CODES = {"config": 3, "input": 4, "descriptors": 5, "graph": 6, "cluster": 7,
              "clean": 8, "subcenter": 9, "merge": 10, "evaluate": 11, "label": 12,
              "synth": 13}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.stage, 1)


@dataclass
class RunResult:
    pool: EmbeddingSet
    descriptors: Descriptors
    k: int
    final: Partition
    snapshots: list[tuple[str, Partition]] = field(default_factory=list)
    reports: list[tuple[str, QualityReport]] = field(default_factory=list)
    merge_log: list = field(default_factory=list)
    purity: subcenter.PurityReport | None = None
    elbow: graph_mod.ElbowResult | None = None
    truth: np.ndarray | None = None
    graph: graph_mod.SimilarityGraph | None = None
    model: subcenter.SubcenterModel | None = None


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def load_inputs(cfg: PipelineConfig):
    """``(embeddings, labeled subset, ground truth or None)``."""
    if cfg.synth is not None:
        emb, truth = synthgen.generate(cfg.synth.spec)
        labeled = synthgen.sample_labeled_subset(
            emb, truth, cfg.synth.labeled_speakers, cfg.synth.labeled_per_speaker,
            seed=cfg.synth.spec.seed)
        return emb, labeled, truth
    emb = load_embeddings(cfg.embeddings, durations=cfg.durations, min_duration=cfg.min_duration)
    labeled = load_labels(cfg.labels, emb)
    truth = load_labels(cfg.truth) if cfg.truth is not None else None
    return emb, labeled, truth


def _cluster_graph(g: graph_mod.SimilarityGraph, seed: int, stage: str) -> Partition:
    if g.num_edges == 0:
        p = Partition(np.full(g.n, REMOVED))
    else:
        p = infomap.cluster(infomap.to_flow(g), seed=seed)
    p.removed_at = [stage if r is not None else None for r in p.removed_at]
    return p


def run_round(cfg: PipelineConfig, pool: EmbeddingSet, descriptors: Descriptors,
              truth: np.ndarray | None, prefix: str = "") -> RunResult:
    seed = cfg.seed
    st = cfg.stages
    result = RunResult(pool, descriptors, 0, Partition(np.full(pool.n, REMOVED)), truth=truth)

    def snapshot(name: str, p: Partition):
        result.snapshots.append((prefix + name, p))
        if truth is not None and (p.labels != REMOVED).any():
            with _stage("evaluate"):
                result.reports.append((prefix + name, report(p, truth)))

    with _stage("graph"):
        if cfg.k is None:
            result.elbow = graph_mod.elbow_select_k(pool, cfg.candidates)
            result.k = result.elbow.k
        else:
            result.k = cfg.k
        g = graph_mod.build_knn(pool, result.k)
    with _stage("cluster"):
        p = _cluster_graph(g, seed, BASED)
    snapshot(BASED, p)
    if st.ned:
        with _stage("graph"):
            g, _ = graph_mod.prune_by_ned(g, descriptors.ned)
        with _stage("cluster"):
            p = _cluster_graph(g, seed, NED)
        snapshot(NED, p)
    result.graph = g
    if st.icd:
        with _stage("clean"):
            p, _ = refine.clean_by_icd(pool, p, descriptors.icd, stage=ICD)
            p, _ = refine.drop_small_clusters(p, cfg.min_size, stage=ICD)
        snapshot(ICD, p)
    if st.subcenter and p.num_clusters >= 2:
        with _stage("subcenter"):
            sc_seed = cfg.subcenter_seed if cfg.subcenter_seed is not None else seed
            model = subcenter.train(pool, p, cfg.subcenter, seed=sc_seed)
            result.purity = subcenter.purity_report(model, pool, p)
            result.model = model
            p, _ = subcenter.purge_impure(p, result.purity, cfg.subcenter.tau, stage=SUBCENTER)
        snapshot(SUBCENTER, p)
    if st.cmd:
        with _stage("merge"):
            p, result.merge_log = merge.progressive_merge(
                pool, p, descriptors, steps=cfg.merge_steps, start=cfg.merge_start)
        snapshot(CMD, p)
    result.final = p
    return result


def run(cfg: PipelineConfig, write: bool = True) -> RunResult:
    """Execute every enabled stage; with ``write`` emit the output tree."""
    with _stage("config"):
        cfg.validate()
    with _stage("input"):
        emb, labeled, truth_labels = load_inputs(cfg)
    with _stage("descriptors"):
        descriptors = compute_descriptors(emb, labeled)
    with _stage("input"):
        if cfg.include_labeled:
            pool_rows = np.arange(emb.n)
        else:
            labeled_rows = set(labeled.rows_in(emb).tolist())
            pool_rows = np.array([r for r in range(emb.n) if r not in labeled_rows], dtype=np.int64)
        pool = emb.subset(pool_rows)
        truth = synthgen.truth_array(pool, truth_labels) if truth_labels is not None else None

    result = run_round(cfg, pool, descriptors, truth)
    final = result.final
    for r in range(2, cfg.rounds + 1):
        kept = final.kept
        if kept.size < 2:
            break
        sub = pool.subset(kept)
        nxt = run_round(cfg, sub, descriptors,
                        truth[kept] if truth is not None else None, prefix=f"r{r}:")
        labels = np.full(pool.n, REMOVED, dtype=np.int64)
        labels[kept] = nxt.final.labels
        removed_at = list(final.removed_at)
        for i, u in enumerate(kept.tolist()):
            removed_at[u] = nxt.final.removed_at[i]
        final = Partition(labels, removed_at)
        for name, snap in nxt.snapshots:
            full = np.full(pool.n, REMOVED, dtype=np.int64)
            full[kept] = snap.labels
            result.snapshots.append((name, Partition(full)))
        result.reports.extend(nxt.reports)
        result.merge_log.extend(nxt.merge_log)
    result.final = final

    if write:
        with _stage("label"):
            write_outputs(cfg, result, emb, labeled)
    return result


def label(p: Partition, emb: EmbeddingSet, labels_path, rejects_path) -> tuple[int, int]:
    """Write final pseudo-labels and a rejects file naming the removing stage."""
    save_partition(p, emb, labels_path)
    rejects = sorted((emb.ids[u], p.removed_at[u] or "unknown")
                     for u in np.flatnonzero(p.labels == REMOVED))
    with open(rejects_path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{uid}\t{stage}\n" for uid, stage in rejects)
    return int((p.labels != REMOVED).sum()), len(rejects)


def _stage_file(i: int, name: str) -> str:
    safe = name.replace("+", "").replace(":", "_") or "stage"
    return f"{i}_{safe}.tsv"


def write_outputs(cfg: PipelineConfig, result: RunResult, emb: EmbeddingSet,
                  labeled: LabeledSubset) -> None:
    out = Path(cfg.output)
    (out / "stages").mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    if cfg.synth is not None:
        (out / "inputs").mkdir(exist_ok=True)
        save_embeddings(emb, out / "inputs" / "embeddings.emb")
        save_labels(labeled, out / "inputs" / "labeled.tsv")
    (out / "descriptors.txt").write_text(result.descriptors.to_text(), encoding="utf-8")
    if result.elbow is not None:
        with open(out / "elbow.tsv", "w", encoding="utf-8") as fh:
            fh.write("k\tmean_kth_similarity\tknee_distance\n")
            for k, y, d in zip(result.elbow.candidates, result.elbow.curve, result.elbow.distances):
                fh.write(f"{k}\t{y!r}\t{d!r}\n")
    graph_mod.save_graph(result.graph, out / "graph.txt")
    for i, (name, snap) in enumerate(result.snapshots):
        save_partition(snap, result.pool, out / "stages" / _stage_file(i, name))
    if result.purity is not None:
        subcenter.save_purity(result.purity, out / "purity.tsv")
        subcenter.save_model(result.model, out / "subcenter.ckpt")
    merge.save_merge_log(result.merge_log, out / "merge_log.tsv")
    if result.reports:
        (out / "quality.tsv").write_text(format_tsv(result.reports), encoding="utf-8")
        (out / "quality.txt").write_text(format_block(result.reports), encoding="utf-8")
    n_labeled, n_rejected = label(result.final, result.pool, out / "labels.tsv", out / "rejects.tsv")
    summary = {
        "seed": cfg.seed,
        "k": result.k,
        "descriptors": {"ned": result.descriptors.ned, "icd": result.descriptors.icd,
                        "cmd": result.descriptors.cmd},
        "pool_size": result.pool.n,
        "labeled": n_labeled,
        "rejected": n_rejected,
        "clusters": result.final.num_clusters,
        "stages": [name for name, _ in result.snapshots],
        "merges": len(result.merge_log),
        "config": cfg.as_dict(),
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
