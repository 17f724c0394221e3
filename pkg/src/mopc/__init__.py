"""Multi-objective progressive clustering for pseudo-labeling embedding sets."""
from .descriptors import Descriptors, compute_descriptors
from .embedstore import REMOVED, EmbeddingSet, LabeledSubset, Partition
from .metrics import QualityReport, report
from .pipeline import PipelineError, RunResult, run
from .synthgen import TABLE1_DESK, SynthSpec, generate

__all__ = ["Descriptors", "compute_descriptors", "REMOVED", "EmbeddingSet", "LabeledSubset",
           "Partition", "QualityReport", "report", "PipelineError", "RunResult", "run",
           "TABLE1_DESK", "SynthSpec", "generate"]

__version__ = "0.1.0"
