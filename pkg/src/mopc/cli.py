"""Command-line entry point: ``mopc run`` plus one subcommand per stage.

Every subcommand reads and writes the same intermediate files as the full
run (EMB1/CSV embeddings, label and partition TSVs, the descriptor report,
the graph edge list), so any stage can be re-run on its own.  Failures exit
with the stage's code from :data:`mopc.pipeline.EXIT_CODES`.
"""
from __future__ import annotations

import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import graph as graph_mod
from . import infomap, merge, pipeline, refine, subcenter, synthgen
from .config import load_config
from .descriptors import Descriptors, compute_descriptors
from .embedstore import (REMOVED, Partition, load_embeddings, load_labels, load_partition,
                         save_embeddings, save_labels, save_partition)
from .metrics import format_block, format_tsv, report
from .pipeline import EXIT_CODES, PipelineError


@contextmanager
def _guard(stage: str):
    try:
        yield
    except (click.exceptions.Exit, click.ClickException, click.Abort):
        raise
    except PipelineError as exc:
        click.echo(f"mopc: {exc}", err=True)
        sys.exit(exc.exit_code)
    except Exception as exc:  # noqa: BLE001 - every failure maps to a stage code
        click.echo(f"mopc: stage {stage!r} failed: {exc}", err=True)
        sys.exit(EXIT_CODES[stage])


def _check_descriptor_option(value, descriptors_path, key: str) -> None:
    if value == "from-descriptors" and descriptors_path is None:
        raise click.UsageError(f"--{key} from-descriptors needs --descriptors")


def _descriptor_value(value: str, descriptors_path, key: str) -> float:
    """``value`` is a float or ``from-descriptors``."""
    if value != "from-descriptors":
        return float(value)
    _check_descriptor_option(value, descriptors_path, key)
    return getattr(Descriptors.from_text(Path(descriptors_path).read_text(encoding="utf-8")), key)


def _load_descriptors(path) -> Descriptors:
    return Descriptors.from_text(Path(path).read_text(encoding="utf-8"))


def _write(text: str, path) -> None:
    if path is None or str(path) == "-":
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text, encoding="utf-8")


EMB = click.option("--embeddings", "embeddings", required=True, type=click.Path(exists=True),
                   help="EMB1 (.emb, with .ids sidecar) or CSV embedding file.")
PART = click.option("--partition", "partition", required=True, type=click.Path(exists=True),
                    help="Partition TSV: id <TAB> cluster.")
EMIT = click.option("--emit", "emit", default="-", show_default=True,
                    help="Output file ('-' for stdout).")


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose: int):
    """Pseudo-labeling of unlabeled embeddings by progressive clustering."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--output", default=None, help="Override the output directory.")
def run(config_path, output):
    """Run every enabled stage from one config file."""
    with _guard("config"):
        cfg = load_config(config_path)
        if output is not None:
            cfg.output = Path(output)
    with _guard("config"):
        result = pipeline.run(cfg)
    if result.reports:
        click.echo(format_block(result.reports), nl=False)
    click.echo(f"labeled {int((result.final.labels != REMOVED).sum())} of {result.pool.n}, "
               f"{result.final.num_clusters} clusters -> {cfg.output}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Config file with a [synth] section.")
@click.option("--emit-embeddings", required=True)
@click.option("--emit-truth", required=True)
@click.option("--emit-labeled", default=None,
              help="Also write a labeled subset (labeled_speakers x labeled_per_speaker).")
def synth(spec_path, emit_embeddings, emit_truth, emit_labeled):
    """Generate a synthetic embedding set with ground-truth labels."""
    with _guard("config"):
        cfg = load_config(spec_path)
        if cfg.synth is None:
            raise ValueError(f"{spec_path}: no [synth] section")
    with _guard("synth"):
        emb, truth = synthgen.generate(cfg.synth.spec)
        fmt = "csv" if emit_embeddings.lower().endswith(".csv") else "binary"
        save_embeddings(emb, emit_embeddings, format=fmt)
        save_labels(truth, emit_truth)
        if emit_labeled:
            labeled = synthgen.sample_labeled_subset(
                emb, truth, cfg.synth.labeled_speakers, cfg.synth.labeled_per_speaker,
                seed=cfg.synth.spec.seed)
            save_labels(labeled, emit_labeled)


@main.command("extract-descriptors")
@EMB
@click.option("--labels", required=True, type=click.Path(exists=True))
@EMIT
def extract_descriptors(embeddings, labels, emit):
    """Compute ned, icd and cmd from the labeled subset."""
    with _guard("input"):
        emb = load_embeddings(embeddings)
        lab = load_labels(labels, emb)
    with _guard("descriptors"):
        _write(compute_descriptors(emb, lab).to_text(), emit)


@main.command("build-graph")
@EMB
@click.option("--k", "k", default="auto", show_default=True, help="Integer or 'auto'.")
@click.option("--candidates", default=",".join(map(str, graph_mod.DEFAULT_CANDIDATES)),
              show_default=True)
@click.option("--ned", default=None, help="Prune edges with weight <= ned (float or from-descriptors).")
@click.option("--descriptors", "descriptors_path", default=None, type=click.Path(exists=True))
@EMIT
def build_graph(embeddings, k, candidates, ned, descriptors_path, emit):
    """Exact cosine kNN graph, optionally pruned by ned."""
    _check_descriptor_option(ned, descriptors_path, "ned")
    with _guard("input"):
        emb = load_embeddings(embeddings)
    with _guard("graph"):
        if k == "auto":
            elbow = graph_mod.elbow_select_k(emb, [int(c) for c in candidates.split(",")])
            k_val = elbow.k
            click.echo(f"elbow k={k_val} curve={[round(v, 4) for v in elbow.curve]}", err=True)
        else:
            k_val = int(k)
        g = graph_mod.build_knn(emb, k_val)
        if ned is not None:
            g, dropped = graph_mod.prune_by_ned(g, _descriptor_value(ned, descriptors_path, "ned"))
            click.echo(f"pruned {dropped} edges", err=True)
        if emit == "-":
            raise ValueError("build-graph needs --emit <file>")
        graph_mod.save_graph(g, emit)


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@EMB
@click.option("--seed", default=42, show_default=True, type=int)
@EMIT
def cluster(graph_path, embeddings, seed, emit):
    """Two-level Infomap on a graph file; node i is row i of the embeddings."""
    with _guard("input"):
        emb = load_embeddings(embeddings)
        g = graph_mod.load_graph(graph_path)
        if g.n != emb.n:
            raise ValueError(f"graph has {g.n} nodes, embeddings {emb.n}")
    with _guard("cluster"):
        p = infomap.cluster(infomap.to_flow(g), seed=seed)
        _emit_partition(p, emb, emit)
        click.echo(f"{p.num_clusters} clusters, {int((p.labels == REMOVED).sum())} isolated",
                   err=True)


def _emit_partition(p: Partition, emb, emit) -> None:
    if emit == "-":
        for uid, c in sorted((emb.ids[u], int(c)) for u, c in enumerate(p.labels) if c != REMOVED):
            click.echo(f"{uid}\t{c}")
    else:
        save_partition(p, emb, emit)


@main.command()
@EMB
@PART
@click.option("--icd", required=True, help="Float or from-descriptors.")
@click.option("--descriptors", "descriptors_path", default=None, type=click.Path(exists=True))
@click.option("--min-size", default=refine.DEFAULT_MIN_SIZE, show_default=True, type=int)
@EMIT
def clean(embeddings, partition, icd, descriptors_path, min_size, emit):
    """Drop members at or below icd, then clusters smaller than min-size."""
    _check_descriptor_option(icd, descriptors_path, "icd")
    with _guard("input"):
        emb = load_embeddings(embeddings)
        p = load_partition(partition, emb)
    with _guard("clean"):
        p, removed = refine.clean_by_icd(emb, p, _descriptor_value(icd, descriptors_path, "icd"))
        p, small = refine.drop_small_clusters(p, min_size)
        _emit_partition(p, emb, emit)
        click.echo(f"removed {removed} members and {small} small clusters", err=True)


@main.command("subcenter-purify")
@EMB
@PART
@click.option("--subcenters", default=3, show_default=True, type=int)
@click.option("--margin", default=0.2, show_default=True, type=float)
@click.option("--scale", default=32.0, show_default=True, type=float)
@click.option("--tau", default=0.7, show_default=True, type=float)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--max-epochs", default=200, show_default=True, type=int)
@click.option("--checkpoint", default=None, help="Write the trained weights here.")
@click.option("--purity", "purity_path", default=None, help="Write the purity histogram TSV here.")
@EMIT
def subcenter_purify(embeddings, partition, subcenters, margin, scale, tau, seed, max_epochs,
                     checkpoint, purity_path, emit):
    """Train a sub-center classifier and purge classes with low dominance."""
    with _guard("input"):
        emb = load_embeddings(embeddings)
        p = load_partition(partition, emb).densified()
    with _guard("subcenter"):
        params = subcenter.SubcenterParams(subcenters=subcenters, margin=margin, scale=scale,
                                           tau=tau, max_epochs=max_epochs)
        model = subcenter.train(emb, p, params, seed=seed)
        purity = subcenter.purity_report(model, emb, p)
        p, purged = subcenter.purge_impure(p, purity, tau)
        if checkpoint:
            subcenter.save_model(model, checkpoint)
        if purity_path:
            subcenter.save_purity(purity, purity_path)
        _emit_partition(p, emb, emit)
        click.echo(f"purged {len(purged)} classes", err=True)


@main.command("merge")
@EMB
@PART
@click.option("--cmd", "cmd", required=True, help="Float or from-descriptors.")
@click.option("--descriptors", "descriptors_path", default=None, type=click.Path(exists=True))
@click.option("--steps", default=merge.DEFAULT_STEPS, show_default=True, type=int)
@click.option("--start", default="auto", show_default=True, help="Float or 'auto'.")
@click.option("--log", "log_path", default=None, help="Write the merge log TSV here.")
@EMIT
def merge_cmd(embeddings, partition, cmd, descriptors_path, steps, start, log_path, emit):
    """Progressively merge mutually nearest clusters down to cmd."""
    _check_descriptor_option(cmd, descriptors_path, "cmd")
    with _guard("input"):
        emb = load_embeddings(embeddings)
        p = load_partition(partition, emb)
    with _guard("merge"):
        cmd_val = _descriptor_value(cmd, descriptors_path, "cmd")
        start_val = None if start == "auto" else float(start)
        p, events = merge.progressive_merge(emb, p, Descriptors(np.nan, np.nan, cmd_val),
                                            steps=steps, start=start_val)
        if log_path:
            merge.save_merge_log(events, log_path)
        _emit_partition(p, emb, emit)
        click.echo(f"{len(events)} merges, {p.num_clusters} clusters", err=True)


@main.command()
@PART
@click.option("--truth", required=True, type=click.Path(exists=True),
              help="Ground-truth TSV: id <TAB> class.  Its ids define the sample set.")
@click.option("--emit", "emit", default=None, help="Write the one-line TSV report here.")
def evaluate(partition, truth, emit):
    """NR1, NR2 and NMI of a partition; truth ids absent from it count as removed."""
    with _guard("input"):
        gt = load_labels(truth)
        assigned = {}
        with open(partition, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    uid, c = line.rstrip("\n").split("\t")
                    assigned[uid] = int(c)
        unknown = set(assigned) - set(gt.ids)
        if unknown:
            raise ValueError(f"{len(unknown)} partition ids lack ground truth, "
                             f"e.g. {sorted(unknown)[0]!r}")
    with _guard("evaluate"):
        labels = np.array([assigned.get(uid, REMOVED) for uid in gt.ids], dtype=np.int64)
        rows = [(Path(partition).stem, report(labels, gt.labels))]
        if emit:
            Path(emit).write_text(format_tsv(rows), encoding="utf-8")
        click.echo(format_block(rows), nl=False)


@main.command()
@EMB
@PART
@click.option("--emit-labels", required=True)
@click.option("--rejects", required=True)
@click.option("--stage", default="unassigned", show_default=True,
              help="Stage tag written for ids absent from the partition.")
def label(embeddings, partition, emit_labels, rejects, stage):
    """Write final pseudo-labels and a rejects file."""
    with _guard("input"):
        emb = load_embeddings(embeddings)
        p = load_partition(partition, emb)
    with _guard("label"):
        p.removed_at = [stage if c == REMOVED else None for c in p.labels]
        n_labeled, n_rejected = pipeline.label(p, emb, emit_labels, rejects)
        click.echo(f"{n_labeled} labeled, {n_rejected} rejected", err=True)


if __name__ == "__main__":
    main()
