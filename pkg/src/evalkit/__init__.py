"""evalkit: evaluation modules (metrics, comparisons, measurements), a bounded-memory
accumulator, a versioned module registry, an evaluator harness and a local
evaluation service."""

from .accumulator import ColumnarBuffer, merge
from .module import CombinedModule, EvaluationModule, ModuleResult, combine
from .registry import Registry, create_scaffold, default_registry, load, validate
from .schema import FeatureSchema, ModuleKind
from .stats import ConfidenceInterval, ResamplePlan, bootstrap_ci, resample_indices

__version__ = "0.1.0"

__all__ = [
    "ColumnarBuffer", "CombinedModule", "ConfidenceInterval", "EvaluationModule", "FeatureSchema",
    "ModuleKind", "ModuleResult", "Registry", "ResamplePlan", "bootstrap_ci", "combine",
    "create_scaffold", "default_registry", "load", "merge", "resample_indices", "validate",
]
