"""Pipeline configuration: dataclasses plus an INI reader/writer.

Grammar: standard INI sections of ``key = value`` lines, ``#`` comments.
Recognised sections and keys (all optional except an input source)::

    [paths]     embeddings, labels, truth, durations, output
    [synth]     speakers, utterances, dim, concentration, outlier_rate,
                split_rate, split_cosine, outlier_spread, seed,
                labeled_speakers, labeled_per_speaker
    [run]       seed, rounds, include_labeled, min_duration
    [graph]     k (integer or "auto"), candidates (comma separated)
    [refine]    min_size
    [subcenter] subcenters, margin, scale, tau, lr, max_epochs, seed
    [merge]     steps, start (float or "auto")
    [stages]    ned, icd, subcenter, cmd (true/false)

Either ``paths.embeddings`` + ``paths.labels`` or a ``[synth]`` section must
be present.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .graph import DEFAULT_CANDIDATES
from .merge import DEFAULT_STEPS
from .refine import DEFAULT_MIN_SIZE
from .subcenter import SubcenterParams
from .synthgen import SynthSpec


@dataclass
class Stages:
    ned: bool = True
    icd: bool = True
    subcenter: bool = True
    cmd: bool = True


@dataclass
class SynthSource:
    spec: SynthSpec = field(default_factory=SynthSpec)
    labeled_speakers: int = 50
    labeled_per_speaker: int = 20


@dataclass
class PipelineConfig:
    output: Path = Path("mopc-out")
    embeddings: Path | None = None
    labels: Path | None = None
    truth: Path | None = None
    durations: Path | None = None
    synth: SynthSource | None = None
    seed: int = 42
    rounds: int = 1
    include_labeled: bool = False
    min_duration: float = 1.0
    k: int | None = None
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    min_size: int = DEFAULT_MIN_SIZE
    subcenter: SubcenterParams = field(default_factory=SubcenterParams)
    subcenter_seed: int | None = None
    merge_steps: int = DEFAULT_STEPS
    merge_start: float | None = None
    stages: Stages = field(default_factory=Stages)

    def validate(self) -> None:
        if self.synth is None and (self.embeddings is None or self.labels is None):
            raise ValueError("config needs paths.embeddings and paths.labels, or a [synth] section")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if not 0.0 <= self.subcenter.tau <= 1.0:
            raise ValueError("subcenter.tau must lie in [0, 1]")

    def as_dict(self) -> dict:
        d = asdict(self)
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _auto(value: str, cast):
    return None if value.strip().lower() == "auto" else cast(value)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    base = path.parent
    cfg = PipelineConfig()

    def rel(value):
        p = Path(value)
        return p if p.is_absolute() else base / p

    if cp.has_section("paths"):
        sec = cp["paths"]
        for key in ("embeddings", "labels", "truth", "durations"):
            if key in sec:
                setattr(cfg, key, rel(sec[key]))
        if "output" in sec:
            cfg.output = rel(sec["output"])
    if cp.has_section("synth"):
        sec = cp["synth"]
        kw = {}
        for f in fields(SynthSpec):
            if f.name in sec:
                kw[f.name] = float(sec[f.name]) if f.type in ("float", float) else int(sec[f.name])
        cfg.synth = SynthSource(SynthSpec(**kw),
                                sec.getint("labeled_speakers", 50),
                                sec.getint("labeled_per_speaker", 20))
    if cp.has_section("run"):
        sec = cp["run"]
        cfg.seed = sec.getint("seed", cfg.seed)
        cfg.rounds = sec.getint("rounds", cfg.rounds)
        cfg.include_labeled = sec.getboolean("include_labeled", cfg.include_labeled)
        cfg.min_duration = sec.getfloat("min_duration", cfg.min_duration)
    if cp.has_section("graph"):
        sec = cp["graph"]
        if "k" in sec:
            cfg.k = _auto(sec["k"], int)
        if "candidates" in sec:
            cfg.candidates = tuple(int(v) for v in sec["candidates"].split(","))
    if cp.has_section("refine"):
        cfg.min_size = cp["refine"].getint("min_size", cfg.min_size)
    if cp.has_section("subcenter"):
        sec = cp["subcenter"]
        kw = {}
        for f in fields(SubcenterParams):
            if f.name in sec:
                kw[f.name] = float(sec[f.name]) if f.type in ("float", float) else int(sec[f.name])
        cfg.subcenter = SubcenterParams(**kw)
        if "seed" in sec:
            cfg.subcenter_seed = sec.getint("seed")
    if cp.has_section("merge"):
        sec = cp["merge"]
        cfg.merge_steps = sec.getint("steps", cfg.merge_steps)
        if "start" in sec:
            cfg.merge_start = _auto(sec["start"], float)
    if cp.has_section("stages"):
        sec = cp["stages"]
        cfg.stages = Stages(**{f.name: sec.getboolean(f.name, True) for f in fields(Stages)})
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """Render ``cfg`` in the INI grammar read by :func:`load_config`."""
    lines = ["[paths]", f"output = {cfg.output}"]
    for key in ("embeddings", "labels", "truth", "durations"):
        if getattr(cfg, key) is not None:
            lines.append(f"{key} = {getattr(cfg, key)}")
    if cfg.synth is not None:
        lines.append("\n[synth]")
        lines += [f"{k} = {v}" for k, v in cfg.synth.spec.as_dict().items()]
        lines += [f"labeled_speakers = {cfg.synth.labeled_speakers}",
                  f"labeled_per_speaker = {cfg.synth.labeled_per_speaker}"]
    lines += ["\n[run]", f"seed = {cfg.seed}", f"rounds = {cfg.rounds}",
              f"include_labeled = {str(cfg.include_labeled).lower()}",
              f"min_duration = {cfg.min_duration}",
              "\n[graph]", f"k = {'auto' if cfg.k is None else cfg.k}",
              f"candidates = {','.join(map(str, cfg.candidates))}",
              "\n[refine]", f"min_size = {cfg.min_size}",
              "\n[subcenter]"]
    lines += [f"{k} = {v}" for k, v in asdict(cfg.subcenter).items()]
    if cfg.subcenter_seed is not None:
        lines.append(f"seed = {cfg.subcenter_seed}")
    lines += ["\n[merge]", f"steps = {cfg.merge_steps}",
              f"start = {'auto' if cfg.merge_start is None else cfg.merge_start}",
              "\n[stages]"]
    lines += [f"{k} = {str(v).lower()}" for k, v in asdict(cfg.stages).items()]
    return "\n".join(lines) + "\n"
