"""Evaluation as a service: jobs, result proposals, review, leaderboards."""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import numbers
import os
import re
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import (DatasetParseError, DatasetUnreadable, EvalkitError, InvalidSpec, InvalidValue,
                      Unauthorized, UnknownMetric, UnknownMetricDirection, UnknownModule, UnknownTask)
from ..evaluator.harness import EvaluationReport, evaluate_task, resolve_metrics
from ..evaluator.provider import DEFAULT_TIMEOUT_S, SubprocessProvider
from ..evaluator.tasks import get_task, load_dataset
from ..registry import Registry, default_registry, higher_is_better
from .store import (APPROVED, CLOSED, PROPOSED, JobRecord, ProposalRecord, Store, worker_identity)

ENV_SERVICE_DIR = "EVALKIT_SERVICE_DIR"
DEFAULT_SERVICE_DIR = ".evalkit-service"
OWNERS_FILE = "owners.json"

# Named providers a job may reference. ``{python}`` is the running
# interpreter, ``{dataset}`` the pinned dataset copy, anything else comes from
# the provider ref's ``args``.
DEFAULT_PROVIDERS: dict[str, list[str]] = {
    "dummy-oracle": ["{python}", "-m", "evalkit.providers", "oracle", "--dataset", "{dataset}"],
    "dummy-constant": ["{python}", "-m", "evalkit.providers", "constant", "--value", "{value}"],
}

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


def _fill(template: Sequence[str], values: Mapping[str, str]) -> list[str]:
    return [_PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), part) for part in template]


def _placeholders(template: Sequence[str]) -> set[str]:
    return {m.group(1) for part in template for m in _PLACEHOLDER.finditer(part)}


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    model: str
    dataset: dict[str, Any]
    metric: str
    value: float
    verified: bool
    state: str
    proposal_id: str
    task: str | None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _scalar(v: Any) -> bool:
    return isinstance(v, numbers.Real) and not isinstance(v, bool) and math.isfinite(v)


def ranking_key(entry_value: float, verified: bool, proposal_id: str, higher_better: bool) -> tuple:
    """Total order: value by direction, then verified first, then older proposal first."""
    return (-entry_value if higher_better else entry_value, not verified, proposal_id)


class Service:
    """All service operations over one :class:`Store`.

    ``owners`` maps model-name prefixes to bearer tokens; a token may review a
    proposal when any prefix of the proposal's model name maps to it.
    ``allow_commands`` lets job specs carry raw provider commands, which means
    running arbitrary programs on the worker host; it is off unless asked for.
    """

    def __init__(self, root: str | os.PathLike | None = None, owners: Mapping[str, str] | None = None,
                 providers: Mapping[str, Sequence[str]] | None = None, allow_commands: bool = False,
                 registry: Registry | None = None):
        root = root or os.environ.get(ENV_SERVICE_DIR) or DEFAULT_SERVICE_DIR
        self.store = Store(root)
        if owners is None:
            owners_path = Path(root) / OWNERS_FILE
            owners = json.loads(owners_path.read_text()) if owners_path.exists() else {}
        self.owners = dict(owners)
        self.providers = {k: list(v) for k, v in (providers or DEFAULT_PROVIDERS).items()}
        self.allow_commands = allow_commands
        self._registry = registry

    @property
    def registry(self) -> Registry:
        return self._registry or default_registry()

    # -------------------------------------------------------------- submission

    def normalize_spec(self, spec: Mapping[str, Any]) -> dict[str, Any]:
        """Validate a job spec and return its canonical form, pinning the dataset by content."""
        if not isinstance(spec, Mapping):
            raise InvalidSpec("job spec must be an object", {"spec": "not an object"})
        fields: dict[str, str] = {}
        known = {"task", "dataset", "providers", "metrics", "metric_params", "ci", "level", "iterations",
                 "seed", "label_mapping"}
        for extra in sorted(set(spec) - known):
            fields[extra] = "unknown field"

        task = None
        try:
            task = get_task(spec.get("task"))  # type: ignore[arg-type]
        except (UnknownTask, TypeError):
            fields["task"] = f"unknown task {spec.get('task')!r}"

        ds = spec.get("dataset")
        if isinstance(ds, str):
            ds = {"path": ds}
        dataset = None
        if not isinstance(ds, Mapping) or not isinstance(ds.get("path"), str):
            fields["dataset"] = "expected {\"path\": ..., \"name\"?: ...}"
        else:
            path = Path(ds["path"]).expanduser()
            if not path.is_file() or not os.access(path, os.R_OK):
                raise DatasetUnreadable(f"dataset {ds['path']} is not a readable file")
            name = ds.get("name") or path.stem
            if not isinstance(name, str):
                fields["dataset.name"] = "must be a string"
            elif task is not None:
                try:
                    parsed = load_dataset(path, task)
                    dataset = {"name": name, "path": str(path.resolve()), "sha256": parsed.sha256,
                               "rows": len(parsed.rows)}
                except DatasetParseError as exc:
                    fields["dataset"] = str(exc)
            if "sha256" in ds and dataset and ds["sha256"] != dataset["sha256"]:
                fields["dataset.sha256"] = f"file hash is {dataset['sha256']}, spec pins {ds['sha256']}"

        metrics = spec.get("metrics")
        metric_params = spec.get("metric_params") or {}
        if metrics is None and task is not None:
            metrics = list(task.default_metrics)
        if not isinstance(metrics, list) or not metrics or not all(isinstance(m, str) for m in metrics):
            fields.setdefault("metrics", "expected a non-empty list of module ids")
        elif len(set(metrics)) != len(metrics):
            fields["metrics"] = "duplicate metric ids"
        elif not isinstance(metric_params, Mapping):
            fields["metric_params"] = "expected an object keyed by metric id"
        elif task is not None:
            problems = []
            for mid in metrics:
                try:
                    resolve_metrics(task, [mid], self.registry, {mid: metric_params.get(mid, {})})
                except UnknownModule:
                    problems.append(f"unknown metric {mid!r}")
                except EvalkitError as exc:
                    problems.append(f"{mid}: {exc}")
            if problems:
                fields["metrics"] = "; ".join(problems)

        providers = self._normalize_providers(spec.get("providers"), fields)

        options = {"ci": spec.get("ci", False), "level": spec.get("level", 0.95),
                   "iterations": spec.get("iterations", 1000), "seed": spec.get("seed", 0)}
        if not isinstance(options["ci"], bool):
            fields["ci"] = "must be a boolean"
        if not _scalar(options["level"]) or not 0 < options["level"] < 1:
            fields["level"] = "must be in (0, 1)"
        for key, hi in (("iterations", 1_000_000), ("seed", 2**63 - 1)):
            v = options[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < (1 if key == "iterations" else 0) or v > hi:
                fields[key] = "out of range"
        label_mapping = spec.get("label_mapping")
        if label_mapping is not None and not (isinstance(label_mapping, Mapping) and all(
                isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
                for k, v in label_mapping.items())):
            fields["label_mapping"] = "expected an object of label name -> int"

        if fields:
            summary = "; ".join(f"{k}: {v}" for k, v in sorted(fields.items()))
            raise InvalidSpec(f"invalid job spec ({summary})", fields)
        return {"task": task.task_id, "dataset": dataset, "providers": providers, "metrics": list(metrics),
                "metric_params": {k: dict(v) for k, v in metric_params.items()}, **options,
                "label_mapping": dict(label_mapping) if label_mapping else None}

    def _normalize_providers(self, refs: Any, fields: dict[str, str]) -> list[dict[str, Any]]:
        if not isinstance(refs, list) or not refs:
            fields["providers"] = "expected a non-empty list of provider refs"
            return []
        out = []
        for i, ref in enumerate(refs):
            key = f"providers[{i}]"
            if not isinstance(ref, Mapping):
                fields[key] = "expected an object"
                continue
            args = ref.get("args") or {}
            if not isinstance(args, Mapping) or not all(isinstance(v, str) for v in args.values()):
                fields[key] = "args must map names to strings"
                continue
            if "name" in ref:
                if ref["name"] not in self.providers:
                    fields[key] = f"unknown provider {ref['name']!r}; known: {sorted(self.providers)}"
                    continue
                template = self.providers[ref["name"]]
                model = ref.get("model") or ref["name"]
            elif "command" in ref:
                if not self.allow_commands:
                    fields[key] = "raw provider commands are disabled on this service"
                    continue
                template = ref["command"]
                if not isinstance(template, list) or not template or not all(isinstance(c, str) for c in template):
                    fields[key] = "command must be a non-empty list of strings"
                    continue
                model = ref.get("model")
            else:
                fields[key] = "needs \"name\" or \"command\""
                continue
            missing = _placeholders(template) - {"python", "dataset"} - set(args)
            if missing:
                fields[key] = f"missing args {sorted(missing)}"
                continue
            if not isinstance(model, str) or not model:
                fields[key] = "model name required"
                continue
            batch_size = ref.get("batch_size", 8)
            timeout_s = ref.get("timeout_s", DEFAULT_TIMEOUT_S)
            if isinstance(batch_size, bool) or not isinstance(batch_size, int) or batch_size < 1:
                fields[key] = "batch_size must be a positive integer"
                continue
            if not _scalar(timeout_s) or timeout_s <= 0:
                fields[key] = "timeout_s must be positive"
                continue
            norm = {"model": model, "batch_size": batch_size, "timeout_s": float(timeout_s), "args": dict(args)}
            norm.update({"name": ref["name"]} if "name" in ref else {"command": list(template)})
            out.append(norm)
        models = [p["model"] for p in out]
        if len(set(models)) != len(models):
            fields["providers"] = "model names must be unique within a job"
        return out

    @staticmethod
    def idempotency_key(spec: Mapping[str, Any]) -> str:
        ident = dict(spec)
        ident["dataset"] = {"name": spec["dataset"]["name"], "sha256": spec["dataset"]["sha256"]}
        blob = json.dumps(ident, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def submit_job(self, spec: Mapping[str, Any], rerun: bool = False) -> JobRecord:
        """Queue a job. Resubmitting an identical spec returns the existing job unless ``rerun``."""
        norm = self.normalize_spec(spec)
        digest = self.store.copy_in(norm["dataset"]["path"])
        if digest != norm["dataset"]["sha256"]:
            raise DatasetUnreadable(f"dataset {norm['dataset']['path']} changed while it was being read")
        job, _ = self.store.insert_job(norm, self.idempotency_key(norm), reuse=not rerun)
        return job

    def get_job(self, job_id: str) -> JobRecord:
        return self.store.get_job(job_id)

    def list_jobs(self, state: str | None = None, limit: int = 100) -> list[JobRecord]:
        return self.store.list_jobs(state, limit)

    # ------------------------------------------------------------------ worker

    def _provider(self, ref: Mapping[str, Any], dataset_path: str) -> SubprocessProvider:
        template = self.providers[ref["name"]] if "name" in ref else ref["command"]
        argv = _fill(template, {"python": sys.executable, "dataset": dataset_path, **ref.get("args", {})})
        return SubprocessProvider(argv, model=ref["model"], batch_size=ref["batch_size"], timeout_s=ref["timeout_s"])

    def execute(self, job: JobRecord) -> list[ProposalRecord]:
        """Run every provider of a job and record one proposal per model."""
        spec = job.spec
        dataset_path = str(self.store.blobs.path(spec["dataset"]["sha256"]))
        proposals = []
        for ref in spec["providers"]:
            with tempfile.TemporaryDirectory(prefix="evalkit-job-") as tmp:
                report = evaluate_task(
                    spec["task"], dataset_path, self._provider(ref, dataset_path), spec["metrics"],
                    ci=spec["ci"], level=spec["level"], iterations=spec["iterations"], seed=spec["seed"],
                    artifact_path=Path(tmp) / "predictions.jsonl", registry=self.registry,
                    label_mapping=spec["label_mapping"], metric_params=spec["metric_params"])
                artifact = self.store.blobs.put_file(report.artifact_path)
            report.artifact_path = str(self.store.blobs.path(artifact))
            report.dataset = {**report.dataset, "name": spec["dataset"]["name"], "path": spec["dataset"]["path"]}
            report_blob = self.store.blobs.put_bytes(report.to_json().encode("utf-8"))
            values = {k: v for k, v in report.values().items() if _scalar(v)}
            proposals.append(self.store.insert_proposal(
                job_id=job.id, model=ref["model"], task=spec["task"],
                dataset={"name": spec["dataset"]["name"], "sha256": spec["dataset"]["sha256"]},
                values=values, verified=True, report_blob=report_blob, artifact_blob=artifact))
        return proposals

    def run_worker(self, max_jobs: int | None = None, stop: threading.Event | None = None,
                   idle_exit: bool = True, poll_s: float = 0.2, lease_s: float = 300.0) -> int:
        """Process queued jobs FIFO; returns how many jobs this worker finished.

        Stale running jobs are recovered first. Evaluation errors never escape:
        they become the job's failure reason.
        """
        worker = worker_identity()
        self.store.recover()
        done = 0
        while max_jobs is None or done < max_jobs:
            if stop is not None and stop.is_set():
                break
            job = self.store.claim(worker, lease_s)
            if job is None:
                if idle_exit:
                    break
                if stop is not None:
                    stop.wait(poll_s)
                else:
                    time.sleep(poll_s)
                continue
            beat_stop = threading.Event()
            beat = threading.Thread(target=self._heartbeat, args=(job.id, worker, lease_s, beat_stop), daemon=True)
            beat.start()
            try:
                self.execute(job)
            except Exception as exc:  # every failure becomes a job record
                code = exc.code if isinstance(exc, EvalkitError) else type(exc).__name__
                self.store.finish(job.id, worker, ok=False, failure=f"{code}: {exc}")
            else:
                self.store.finish(job.id, worker, ok=True)
            finally:
                beat_stop.set()
                beat.join()
            done += 1
        return done

    def _heartbeat(self, job_id: str, worker: str, lease_s: float, stop: threading.Event) -> None:
        while not stop.wait(lease_s / 3):
            self.store.heartbeat(job_id, worker, lease_s)

    # --------------------------------------------------------------- proposals

    def get_proposal(self, proposal_id: str) -> ProposalRecord:
        return self.store.get_proposal(proposal_id)

    def list_proposals(self, model: str | None = None, dataset: str | None = None,
                       states: tuple[str, ...] | None = None) -> list[ProposalRecord]:
        return self.store.list_proposals(model=model, dataset=dataset, states=states)

    def get_report(self, proposal_id: str) -> EvaluationReport | None:
        p = self.get_proposal(proposal_id)
        if p.report_blob is None:
            return None
        return EvaluationReport.from_json(self.store.blobs.get_bytes(p.report_blob).decode("utf-8"))

    def authorized(self, model: str, token: str | None) -> bool:
        if not token:
            return False
        return any(model.startswith(prefix) and hmac.compare_digest(token.encode(), str(tok).encode())
                   for prefix, tok in self.owners.items())

    def review_proposal(self, proposal_id: str, decision: str, token: str | None) -> ProposalRecord:
        """Approve or close a proposal as the model owner."""
        states = {"approve": APPROVED, "close": CLOSED}
        if decision not in states:
            raise InvalidValue(f"decision must be 'approve' or 'close', got {decision!r}")
        proposal = self.store.get_proposal(proposal_id)
        if not self.authorized(proposal.model, token):
            raise Unauthorized(f"token is not an owner of model {proposal.model!r}")
        return self.store.decide(proposal_id, states[decision])

    # ------------------------------------------------------------ self-report

    def known_metric(self, key: str) -> bool:
        for mid in self.registry.available():
            outs = self._outputs(mid)
            if key in outs or any(key == f"{mid}_{o}" for o in outs):
                return True
        return False

    def _outputs(self, module_id: str) -> dict[str, bool | None]:
        try:
            resolved = self.registry.resolve(module_id)
        except EvalkitError:
            return {}
        return {o.name: o.higher_is_better for o in resolved.manifest.output_schema}

    def import_self_reported(self, model: str, dataset: Mapping[str, Any] | str, metric: str, value: Any,
                             note: str | None = None, task: str | None = None) -> ProposalRecord:
        """Record an externally claimed score as an unverified proposal."""
        if not isinstance(model, str) or not model:
            raise InvalidValue("model name required")
        ds = {"name": dataset} if isinstance(dataset, str) else dict(dataset)
        if not isinstance(ds.get("name"), str) or not ds["name"]:
            raise InvalidValue("dataset name required")
        if not _scalar(value):
            raise InvalidValue(f"value {value!r} is not a finite number")
        if not isinstance(metric, str) or not self.known_metric(metric):
            raise UnknownMetric(f"unknown metric key {metric!r}")
        if task is not None:
            get_task(task)
        return self.store.insert_proposal(
            job_id=None, model=model, task=task, dataset={"name": ds["name"], "sha256": ds.get("sha256")},
            values={metric: float(value)}, verified=False, source_note=note)

    # ------------------------------------------------------------- leaderboard

    def metric_direction(self, metric: str) -> bool:
        """True if higher is better. Never guessed: no declaration is an error."""
        direction = higher_is_better(metric, self.registry)
        if direction is not None:
            return direction
        for mid in sorted(self.registry.available(), key=len, reverse=True):
            if metric.startswith(mid + "_"):
                d = self._outputs(mid).get(metric[len(mid) + 1:])
                if d is not None:
                    return d
        for mid in self.registry.available():
            d = self._outputs(mid).get(metric)
            if d is not None:
                return d
        raise UnknownMetricDirection(f"no module card declares whether higher {metric!r} is better")

    def get_leaderboard(self, dataset: str, metric: str, task: str | None = None, verified_only: bool = False,
                        include_closed: bool = False, approved_only: bool = False) -> list[LeaderboardEntry]:
        """Ranked entries for one dataset (name or sha256) and metric key.

        Proposed and approved results are shown by default, each labeled;
        closed ones only with ``include_closed``.
        """
        higher = self.metric_direction(metric)
        states = (APPROVED,) if approved_only else (PROPOSED, APPROVED, CLOSED) if include_closed \
            else (PROPOSED, APPROVED)
        rows = []
        for p in self.store.list_proposals(dataset=dataset, states=states):
            if task is not None and p.task != task:
                continue
            if verified_only and not p.verified:
                continue
            v = p.values.get(metric)
            if _scalar(v):
                rows.append((ranking_key(float(v), p.verified, p.id, higher), p, float(v)))
        rows.sort(key=lambda r: r[0])
        return [LeaderboardEntry(rank=i, model=p.model, dataset=p.dataset, metric=metric, value=v,
                                 verified=p.verified, state=p.state, proposal_id=p.id, task=p.task)
                for i, (_, p, v) in enumerate(rows, start=1)]

    # -------------------------------------------------------------- model card

    def model_card(self, model: str) -> dict[str, Any]:
        """Structured card metadata: the model's approved results only."""
        results = []
        for p in self.store.list_proposals(model=model, states=(APPROVED,)):
            results.append({
                "task": p.task,
                "dataset": p.dataset,
                "metrics": [{"name": k, "value": v} for k, v in sorted(p.values.items())],
                "verified": p.verified,
                "proposal_id": p.id,
                "source": p.source_note if not p.verified else f"job {p.job_id}",
            })
        return {"model": model, "results": results}
