"""Task definitions: which dataset columns feed the model, and how raw
predictions and references become metric-ready values."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from ..errors import DatasetParseError, MetricSchemaMismatch, UnknownTask


@dataclass
class Dataset:
    path: str
    sha256: str
    rows: list[dict[str, Any]]
    ids: list[str]

    def ref(self) -> dict[str, Any]:
        return {"path": self.path, "sha256": self.sha256, "rows": len(self.rows)}


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(row, dict):
                    raise DatasetParseError(f"{path}:{lineno}: each line must be a JSON object")
                rows.append(row)
    except OSError as exc:
        raise DatasetParseError(f"cannot read dataset {path}: {exc}") from exc
    return rows


def input_hash(inputs: Mapping[str, Any]) -> str:
    blob = json.dumps(inputs, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class TaskSpec:
    """How one task maps dataset rows to provider inputs and metric rows.

    ``metric_type`` is the feature type of the ``predictions``/``references``
    columns the task produces for metric modules.
    """

    task_id: str
    input_columns: tuple[str, ...]
    reference_column: str
    metric_type: str
    default_metrics: tuple[str, ...]
    label_mapping: dict[str, int] | None = None
    _prepare_reference: Callable[["TaskSpec", Any], Any] | None = field(default=None, repr=False)
    _postprocess: Callable[["TaskSpec", Any], Any] | None = field(default=None, repr=False)
    flatten: bool = False

    def check_columns(self, rows: Sequence[Mapping[str, Any]], path: str = "") -> None:
        needed = (*self.input_columns, self.reference_column)
        for i, row in enumerate(rows, start=1):
            missing = [c for c in needed if c not in row]
            if missing:
                raise DatasetParseError(f"{path}: record {i} lacks column(s) {missing} "
                                        f"required by task {self.task_id!r}")

    def preprocess(self, row: Mapping[str, Any]) -> dict[str, Any]:
        return {c: row[c] for c in self.input_columns}

    def reference(self, row: Mapping[str, Any]) -> Any:
        raw = row[self.reference_column]
        return self._prepare_reference(self, raw) if self._prepare_reference else raw

    def postprocess(self, prediction: Any) -> Any:
        return self._postprocess(self, prediction) if self._postprocess else prediction

    def with_labels(self, rows: Sequence[Mapping[str, Any]], mapping: Mapping[str, int] | None) -> "TaskSpec":
        """Copy of this task with a label mapping (explicit, or derived from sorted string labels)."""
        if self.metric_type != "int":
            return self
        if mapping is None:
            labels = set()
            for row in rows:
                raw = row[self.reference_column]
                labels.update(raw if self.flatten else [raw])
            strings = sorted(lab for lab in labels if isinstance(lab, str))
            mapping = {lab: i for i, lab in enumerate(strings)} if strings else None
        return TaskSpec(self.task_id, self.input_columns, self.reference_column, self.metric_type,
                        self.default_metrics, dict(mapping) if mapping else None,
                        self._prepare_reference, self._postprocess, self.flatten)

    def metric_columns(self, predictions: Sequence[Any], references: Sequence[Any]) -> dict[str, list]:
        """Metric-ready ``predictions``/``references`` columns (flattened for token tasks)."""
        if not self.flatten:
            return {"predictions": list(predictions), "references": list(references)}
        preds, refs = [], []
        for i, (p, r) in enumerate(zip(predictions, references)):
            if len(p) != len(r):
                raise MetricSchemaMismatch(f"example {i}: {len(p)} predicted tags for {len(r)} tokens")
            preds.extend(p)
            refs.extend(r)
        return {"predictions": preds, "references": refs}


def _label_id(task: TaskSpec, label: Any) -> int:
    if isinstance(label, bool):
        raise DatasetParseError(f"label {label!r} is not a class id or name")
    if isinstance(label, int):
        return label
    if isinstance(label, str):
        if task.label_mapping and label in task.label_mapping:
            return task.label_mapping[label]
        if label.lstrip("-").isdigit():
            return int(label)
        return -1  # unknown label name: never equals a reference id
    raise DatasetParseError(f"label {label!r} is not a class id or name")


def _classification_prediction(task: TaskSpec, pred: Any) -> int:
    # pipeline-style outputs: {"label": ..., "score": ...} or a list of them
    if isinstance(pred, list) and pred and isinstance(pred[0], dict):
        pred = max(pred, key=lambda d: d.get("score", 0.0))
    if isinstance(pred, dict):
        pred = pred.get("label")
    return _label_id(task, pred)


def _token_reference(task: TaskSpec, tags: Any) -> list[int]:
    if not isinstance(tags, list):
        raise DatasetParseError(f"token tags must be a list, got {tags!r}")
    return [_label_id(task, t) for t in tags]


def _token_prediction(task: TaskSpec, pred: Any) -> list[int]:
    if not isinstance(pred, list):
        return []
    return [_classification_prediction(task, p) for p in pred]


def _qa_reference(task: TaskSpec, answer: Any) -> str:
    # accepts "text", ["text", ...] or {"text": [...]} (first answer wins)
    if isinstance(answer, dict):
        answer = answer.get("text", "")
    if isinstance(answer, list):
        answer = answer[0] if answer else ""
    if not isinstance(answer, str):
        raise DatasetParseError(f"answer {answer!r} is not a string")
    return answer


def _qa_prediction(task: TaskSpec, pred: Any) -> str:
    if isinstance(pred, dict):
        pred = pred.get("answer", "")
    return pred if isinstance(pred, str) else ""


TASKS: dict[str, TaskSpec] = {
    "text-classification": TaskSpec(
        "text-classification", ("text",), "label", "int", ("accuracy",),
        _prepare_reference=_label_id, _postprocess=_classification_prediction),
    "token-classification": TaskSpec(
        "token-classification", ("tokens",), "tags", "int", ("accuracy",),
        _prepare_reference=_token_reference, _postprocess=_token_prediction, flatten=True),
    "question-answering-extractive": TaskSpec(
        "question-answering-extractive", ("question", "context"), "answer", "string", ("exact_match",),
        _prepare_reference=_qa_reference, _postprocess=_qa_prediction),
}


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise UnknownTask(f"unknown task {task_id!r}; known tasks: {sorted(TASKS)}") from None


def load_dataset(path: str | Path, task: TaskSpec) -> Dataset:
    """Read a line-delimited JSON dataset and check it against ``task``.

    Example ids come from an ``id`` field when present, otherwise the
    zero-based record index; they must be unique.
    """
    path = str(path)
    if not Path(path).is_file():
        raise DatasetParseError(f"dataset {path} does not exist")
    rows = read_jsonl(path)
    if not rows:
        raise DatasetParseError(f"dataset {path} has no records")
    task.check_columns(rows, path)
    ids = [str(row.get("id", i)) for i, row in enumerate(rows)]
    if len(set(ids)) != len(ids):
        raise DatasetParseError(f"dataset {path} has duplicate example ids")
    return Dataset(path, file_sha256(path), rows, ids)
