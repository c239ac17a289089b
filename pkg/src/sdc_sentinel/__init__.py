"""Neural silent-data-corruption detectors for task-based computations.

The pipeline: profile a benchmark reliably, train seven small MLP detectors on
perturbed feature vectors, pick the one with the lowest expected-error/overhead
product, and simulate overclocked execution with fault injection.
"""

from .archs import ArchitectureSpec, synthesize
from .augment import PerturbationParams
from .backend import BACKEND
from .harness import (NONE, ORACLE, BaselineDetector, ExecutionPolicy, FaultModel, Trace, Verdict,
                      detect, execute)
from .metrics import DetectorScore, QualityReport, eeop, expected_error
from .mlp import DetectorModel, TrainConfig
from .perf import (EvaluationReport, FrequencyPair, NoViableDetector, evaluate_policy, overhead,
                   select_fittest, speedup)
from .persistence import ExperimentManifest, ManifestError, load_manifest
from .tasks import Workload, get_kind, kind_names
from .trainer import ProfileDataset, train_all, train_detector

__all__ = [
    "ArchitectureSpec", "synthesize", "PerturbationParams", "BACKEND", "NONE", "ORACLE",
    "BaselineDetector", "ExecutionPolicy", "FaultModel", "Trace", "Verdict", "detect", "execute",
    "DetectorScore", "QualityReport", "eeop", "expected_error", "DetectorModel", "TrainConfig",
    "EvaluationReport", "FrequencyPair", "NoViableDetector", "evaluate_policy", "overhead",
    "select_fittest", "speedup", "ExperimentManifest", "ManifestError", "load_manifest",
    "Workload", "get_kind", "kind_names", "ProfileDataset", "train_all", "train_detector",
]

__version__ = "0.1.0"
