from pathlib import Path

import pytest

from mopc.config import dump_config, load_config

SAMPLE = """
[paths]
embeddings = data/emb.csv   # relative to this file
labels = /abs/labels.tsv
output = out

[graph]
k = auto
candidates = 5,10,20

[subcenter]
tau = 0.6
subcenters = 4

[merge]
start = 0.8

[stages]
cmd = false
"""


def write(tmp_path, text):
    path = tmp_path / "c.ini"
    path.write_text(text)
    return path


def test_load_sample(tmp_path):
    cfg = load_config(write(tmp_path, SAMPLE))
    assert cfg.embeddings == tmp_path / "data" / "emb.csv"
    assert cfg.labels == Path("/abs/labels.tsv")
    assert cfg.k is None and cfg.candidates == (5, 10, 20)
    assert cfg.subcenter.tau == 0.6 and cfg.subcenter.subcenters == 4
    assert cfg.merge_start == 0.8
    assert not cfg.stages.cmd and cfg.stages.ned


def test_dump_round_trip(tmp_path):
    cfg = load_config(write(tmp_path, SAMPLE))
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again.as_dict() == cfg.as_dict()


def test_table1_config_round_trip(tmp_path):
    cfg = load_config(Path(__file__).parent.parent / "configs" / "table1_desk.ini")
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again.as_dict() == cfg.as_dict()


@pytest.mark.parametrize("text", [
    "[run]\nseed = 1\n",
    SAMPLE + "\n[run]\nrounds = 0\n",
    SAMPLE.replace("tau = 0.6", "tau = 1.5"),
    SAMPLE + "\n[refine]\nmin_size = 0\n",
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ValueError):
        load_config(write(tmp_path, text))
