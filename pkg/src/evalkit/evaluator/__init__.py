"""Task-level evaluation harness."""

from .harness import (EvaluationReport, evaluate_task, read_artifact, recompute_from_artifact,
                      recompute_report, resolve_metrics)
from .perf import PerfStats, measure_perf
from .provider import PROTOCOL, FunctionProvider, Provider, ProviderRun, SubprocessProvider
from .tasks import TASKS, Dataset, TaskSpec, get_task, load_dataset

__all__ = [
    "EvaluationReport", "evaluate_task", "read_artifact", "recompute_from_artifact", "recompute_report",
    "resolve_metrics", "PerfStats", "measure_perf", "PROTOCOL", "FunctionProvider", "Provider",
    "ProviderRun", "SubprocessProvider", "TASKS", "Dataset", "TaskSpec", "get_task", "load_dataset",
]
