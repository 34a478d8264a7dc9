"""Run a (model, dataset, metrics) triplet for a task and produce a report."""

from __future__ import annotations

import datetime as _dt
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import DegenerateMetric, EvalkitError, MetricSchemaMismatch, ProviderProtocolViolation
from ..module import EvaluationModule, ModuleResult
from ..registry import Registry, default_registry
from ..schema import ModuleKind
from ..stats import ConfidenceInterval, ResamplePlan, interpolated_quantile
from .perf import PerfStats, measure_perf
from .provider import Provider
from .tasks import TaskSpec, get_task, input_hash, load_dataset, read_jsonl


@dataclass
class EvaluationReport:
    task: str
    dataset: dict[str, Any]
    provider: dict[str, Any]
    metrics: list[ModuleResult]
    perf: PerfStats
    artifact_path: str
    seed: int
    timestamp: str
    n_examples: int
    cis: dict[str, dict[str, ConfidenceInterval]] = field(default_factory=dict)
    label_mapping: dict[str, int] | None = None

    def values(self) -> dict[str, Any]:
        """Every metric value under one flat key space.

        A key reported by several modules is prefixed ``<module_id>_``, the
        same rule :func:`evalkit.combine` uses.
        """
        counts: dict[str, int] = {}
        for r in self.metrics:
            for k in r.values:
                counts[k] = counts.get(k, 0) + 1
        return {(f"{r.module_id}_{k}" if counts[k] > 1 else k): v
                for r in self.metrics for k, v in r.values.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "dataset": dict(self.dataset),
            "provider": dict(self.provider),
            "metrics": [r.to_dict() for r in self.metrics],
            "cis": {m: {k: ci.to_dict() for k, ci in keys.items()} for m, keys in self.cis.items()},
            "perf": self.perf.to_dict(),
            "artifact_path": self.artifact_path,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "n_examples": self.n_examples,
            "label_mapping": self.label_mapping,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluationReport":
        return cls(
            task=d["task"],
            dataset=dict(d["dataset"]),
            provider=dict(d["provider"]),
            metrics=[ModuleResult.from_dict(r) for r in d["metrics"]],
            perf=PerfStats.from_dict(d["perf"]),
            artifact_path=d["artifact_path"],
            seed=int(d["seed"]),
            timestamp=d["timestamp"],
            n_examples=int(d["n_examples"]),
            cis={m: {k: ConfidenceInterval.from_dict(ci) for k, ci in keys.items()}
                 for m, keys in d.get("cis", {}).items()},
            label_mapping=d.get("label_mapping"),
        )

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------ metric plumbing

def _column_adapter(module: EvaluationModule, task: TaskSpec):
    """Return a function mapping task metric columns to the module's features.

    A string-reference task may feed a module whose references are lists of
    strings (one reference each). Anything else must match exactly.
    """
    if module.kind is not ModuleKind.METRIC:
        raise MetricSchemaMismatch(f"module {module.id!r} is a {module.kind.value}, "
                                   f"the evaluator needs metric modules")
    pred_t = module.features.type_of("predictions")
    ref_t = module.features.type_of("references")
    if pred_t != task.metric_type:
        raise MetricSchemaMismatch(f"module {module.id!r} takes {pred_t} predictions; task "
                                   f"{task.task_id!r} produces {task.metric_type}")
    if ref_t == task.metric_type:
        return lambda cols: cols
    if task.metric_type == "string" and ref_t == "string-sequence":
        return lambda cols: {"predictions": cols["predictions"], "references": [[r] for r in cols["references"]]}
    raise MetricSchemaMismatch(f"module {module.id!r} takes {ref_t} references; task "
                               f"{task.task_id!r} produces {task.metric_type}")


def resolve_metrics(task: TaskSpec, metrics: Sequence[str] | None, registry: Registry | None = None,
                    metric_params: Mapping[str, Mapping[str, Any]] | None = None):
    """Load metric modules and check them against the task before any inference runs."""
    reg = registry or default_registry()
    ids = list(metrics) if metrics else list(task.default_metrics)
    loaded = []
    for mid in ids:
        module = reg.load(mid)
        adapt = _column_adapter(module, task)
        params = dict((metric_params or {}).get(mid, {}))
        module.resolve_parameters(params)
        loaded.append((module, adapt, params))
    return loaded


def _score(module: EvaluationModule, adapt, params: Mapping[str, Any], columns: Mapping[str, list]) -> ModuleResult:
    return module.compute(adapt(columns), **params)


def _metric_cis(module: EvaluationModule, adapt, params: Mapping[str, Any], task: TaskSpec,
                preds: list, refs: list, result: ModuleResult, level: float, iterations: int,
                seed: int) -> dict[str, ConfidenceInterval]:
    """Percentile intervals for each scalar float output, resampling examples."""
    keys = [o.name for o in module.output_schema if o.kind == "float"]
    keys = [k for k in keys if isinstance(result.values.get(k), float)]
    if not keys:
        return {}
    n = len(preds)
    plan = ResamplePlan(n=n, iterations=iterations, seed=seed)
    samples = {k: np.empty(iterations, dtype=np.float64) for k in keys}
    for start, block in plan.blocks():
        for j, idx in enumerate(block):
            b = start + j
            cols = task.metric_columns([preds[i] for i in idx], [refs[i] for i in idx])
            try:
                values = module.score(module.features.validate_batch(adapt(cols)), **params).values
            except EvalkitError as exc:
                raise DegenerateMetric(f"{module.id}: bootstrap iteration {b} failed: {exc}", iteration=b) from exc
            for k in keys:
                samples[k][b] = values[k]
    alpha = (1.0 - level) / 2.0
    out = {}
    for k in keys:
        s = np.sort(samples[k])
        out[k] = ConfidenceInterval(point=result.values[k], low=interpolated_quantile(s, alpha),
                                    high=interpolated_quantile(s, 1.0 - alpha), level=level,
                                    iterations=iterations, seed=seed)
    return out


# ---------------------------------------------------------------- artifacts

def write_artifact(path: str | os.PathLike, ids: Sequence[str], hashes: Sequence[str],
                   preds: Sequence[Any], refs: Sequence[Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rid, h, p, r in zip(ids, hashes, preds, refs):
            fh.write(json.dumps({"id": rid, "input_hash": h, "prediction": p, "reference": r},
                                ensure_ascii=False, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_artifact(path: str | os.PathLike) -> tuple[list, list]:
    rows = read_jsonl(path)
    return [r["prediction"] for r in rows], [r["reference"] for r in rows]


def recompute_from_artifact(path: str | os.PathLike, task: str | TaskSpec, metrics: Sequence[str] | None = None,
                            registry: Registry | None = None,
                            metric_params: Mapping[str, Mapping[str, Any]] | None = None) -> list[ModuleResult]:
    """Score a persisted predictions artifact offline, without the provider."""
    spec = get_task(task) if isinstance(task, str) else task
    preds, refs = read_artifact(path)
    columns = spec.metric_columns(preds, refs)
    return [_score(m, adapt, params, columns)
            for m, adapt, params in resolve_metrics(spec, metrics, registry, metric_params)]


def recompute_report(report: EvaluationReport, registry: Registry | None = None) -> list[ModuleResult]:
    """Recompute a report's metric results from its own artifact and parameters."""
    ids = [r.module_id for r in report.metrics]
    params = {r.module_id: r.parameters_used for r in report.metrics}
    return recompute_from_artifact(report.artifact_path, report.task, ids, registry, params)


# ---------------------------------------------------------------- the harness

def evaluate_task(
    task: str | TaskSpec,
    dataset_path: str | os.PathLike,
    provider: Provider,
    metrics: Sequence[str] | None = None,
    *,
    ci: bool = False,
    level: float = 0.95,
    iterations: int = 1000,
    seed: int = 0,
    artifact_path: str | os.PathLike | None = None,
    registry: Registry | None = None,
    label_mapping: Mapping[str, int] | None = None,
    metric_params: Mapping[str, Mapping[str, Any]] | None = None,
) -> EvaluationReport:
    """Evaluate ``provider`` on a dataset for ``task``.

    Metric values depend only on the dataset, the predictions and the seed,
    never on batch size or pipelining.
    """
    spec = get_task(task) if isinstance(task, str) else task
    dataset = load_dataset(dataset_path, spec)
    spec = spec.with_labels(dataset.rows, label_mapping)
    loaded = resolve_metrics(spec, metrics, registry, metric_params)

    inputs = [spec.preprocess(row) for row in dataset.rows]
    run = provider.run(spec.task_id, list(zip(dataset.ids, inputs)))
    missing = [rid for rid in dataset.ids if rid not in run.predictions]
    if missing:
        raise ProviderProtocolViolation(f"provider returned no prediction for ids {missing[:5]}")
    preds = [spec.postprocess(run.predictions[rid]) for rid in dataset.ids]
    refs = [spec.reference(row) for row in dataset.rows]

    columns = spec.metric_columns(preds, refs)
    results, cis = [], {}
    for module, adapt, params in loaded:
        result = _score(module, adapt, params, columns)
        results.append(result)
        if ci:
            intervals = _metric_cis(module, adapt, params, spec, preds, refs, result, level, iterations, seed)
            if intervals:
                cis[module.id] = intervals

    if artifact_path is None:
        artifact_path = Path(tempfile.mkdtemp(prefix="evalkit-run-")) / "predictions.jsonl"
    write_artifact(artifact_path, dataset.ids, [input_hash(x) for x in inputs], preds, refs)

    provider_ref = dict(provider.describe())
    provider_ref["model"] = run.model
    return EvaluationReport(
        task=spec.task_id,
        dataset=dataset.ref(),
        provider=provider_ref,
        metrics=results,
        perf=measure_perf(run.timings, run.total_time_s),
        artifact_path=str(artifact_path),
        seed=seed,
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        n_examples=len(dataset.rows),
        cis=cis,
        label_mapping=spec.label_mapping,
    )
