import numpy as np
import pytest

from mopc import pipeline
from mopc.config import PipelineConfig, Stages, SynthSource
from mopc.embedstore import REMOVED, EmbeddingSet, Partition, load_partition
from mopc.graph import build_knn
from mopc.infomap import cluster, to_flow
from mopc.pipeline import EXIT_CODES, PipelineError, label, run
from mopc.synthgen import SynthSpec


def small(tmp_path, **kw):
    spec = SynthSpec(speakers=30, utterances=20, dim=32, seed=3)
    return PipelineConfig(output=tmp_path / "out", synth=SynthSource(spec, 10, 20), k=10, **kw)


def test_all_stages_off_is_plain_infomap(tmp_path):
    cfg = small(tmp_path, stages=Stages(False, False, False, False))
    result = run(cfg, write=False)
    assert [name for name, _ in result.snapshots] == [pipeline.BASED]
    expected = cluster(to_flow(build_knn(result.pool, 10)), seed=cfg.seed)
    assert np.array_equal(result.final.labels, expected.labels)


def test_rerun_is_bit_identical(tmp_path):
    a = run(small(tmp_path), write=False)
    b = run(small(tmp_path), write=False)
    assert np.array_equal(a.final.labels, b.final.labels)
    assert [r.as_dict() for _, r in a.reports] == [r.as_dict() for _, r in b.reports]
    assert a.merge_log == b.merge_log


def test_labeled_samples_leave_the_pool(tmp_path):
    result = run(small(tmp_path), write=False)
    assert result.pool.n == 600 - 200
    cfg = small(tmp_path)
    emb, labeled, _ = pipeline.load_inputs(cfg)
    assert not any(uid in result.pool for uid in labeled.ids)
    cfg = small(tmp_path, include_labeled=True)
    assert run(cfg, write=False).pool.n == 600


def test_label_examples(tmp_path):
    emb = EmbeddingSet(["a", "b", "c"], np.eye(3))
    p = Partition([0, 0, REMOVED], [None, None, "++ICD"])
    assert label(p, emb, tmp_path / "l.tsv", tmp_path / "r.tsv") == (2, 1)
    assert (tmp_path / "r.tsv").read_text() == "c\t++ICD\n"
    assert label(Partition([REMOVED] * 3), emb, tmp_path / "l2.tsv", tmp_path / "r2.tsv") == (0, 3)


def test_every_sample_labeled_or_rejected_once(tmp_path):
    cfg = small(tmp_path)
    result = run(cfg)
    out = cfg.output
    labeled = [l.split("\t")[0] for l in (out / "labels.tsv").read_text().splitlines()]
    rejected = [l.split("\t") for l in (out / "rejects.tsv").read_text().splitlines()]
    ids = labeled + [r[0] for r in rejected]
    assert sorted(ids) == sorted(result.pool.ids) and len(set(ids)) == len(ids)
    # each reject names the first stage whose snapshot no longer holds it
    snaps = {name: load_partition(out / "stages" / pipeline._stage_file(i, name), result.pool)
             for i, (name, _) in enumerate(result.snapshots)}
    order = [name for name, _ in result.snapshots]
    for uid, stage in rejected:
        u = result.pool.index_of(uid)
        first = next(name for name in order if snaps[name].labels[u] == REMOVED)
        assert first == stage


def test_quality_improves_on_small_fixture(tmp_path):
    result = run(small(tmp_path), write=False)
    reports = dict(result.reports)
    assert reports[pipeline.CMD].nmi >= reports[pipeline.BASED].nmi


def test_second_round(tmp_path):
    result = run(small(tmp_path, rounds=2), write=False)
    assert any(name.startswith("r2:") for name, _ in result.snapshots)
    assert result.final.n == result.pool.n


@pytest.mark.parametrize("broken,stage", [
    (dict(rounds=0), "config"),
    (dict(synth=None, embeddings="/nonexistent.emb", labels="/nonexistent.tsv"), "input"),
])
def test_stage_errors_carry_exit_codes(tmp_path, broken, stage):
    cfg = small(tmp_path)
    for key, value in broken.items():
        setattr(cfg, key, value)
    with pytest.raises(PipelineError) as err:
        run(cfg, write=False)
    assert err.value.stage == stage and err.value.exit_code == EXIT_CODES[stage]


def test_exit_codes_are_distinct():
    codes = list(EXIT_CODES.values())
    assert len(set(codes)) == len(codes) and min(codes) > 2
