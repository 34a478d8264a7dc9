"""``evalkit`` command line.

Exit codes: 0 success, 1 user error, 2 internal error, 3 validation
violations found. Results go to stdout (aligned text, or JSON with
``--json``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import shlex
import sys
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__
from .errors import EvalkitError, InvalidParameter, SchemaMismatch, UnknownModule

EXIT_OK, EXIT_USER, EXIT_INTERNAL, EXIT_VIOLATIONS = 0, 1, 2, 3

CONVENTIONS = {
    "mcnemar": ("convention: exact two-sided binomial test on discordant pairs (n01 = A wrong and B right, "
                "n10 = A right and B wrong); statistic = (n01 - n10)^2 / (n01 + n10); p = 1 when n01 + n10 = 0"),
    "bootstrap": ("convention: delta = metric(A) - metric(B); p = 2 x fraction of seeded resamples whose delta "
                  "opposes or zeroes the full-data delta, capped at 1"),
}


class UsageError(EvalkitError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2; bad flags are user errors
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ----------------------------------------------------------------- output

def fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return "" if value is None else str(value)


def table(rows: Sequence[Sequence[Any]], headers: Sequence[str] | None = None) -> str:
    cells = [[fmt(c) for c in row] for row in rows]
    if headers:
        cells.insert(0, list(headers))
    if not cells:
        return ""
    widths = [max(len(r[i]) for r in cells if i < len(r)) for i in range(max(map(len, cells)))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines)


def emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def emit_json(payload: Any) -> None:
    emit(json.dumps(payload, indent=2, sort_keys=True))


def note(text: str) -> None:
    print(text, file=sys.stderr)


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _json_or_str(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(items: Iterable[str]) -> dict[str, dict[str, Any]]:
    """``module.param=value`` flags -> {module: {param: value}}."""
    out: dict[str, dict[str, Any]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        mid, dot, pname = key.rpartition(".")
        if not sep or not dot or not mid or not pname:
            raise InvalidParameter(f"--param expects module.name=value, got {item!r}")
        out.setdefault(mid, {})[pname] = _json_or_str(value)
    return out


# --------------------------------------------------------------- commands

def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9_\-]+", "_", name.strip().lower()).strip("_")
    return slug


def cmd_create(args) -> int:
    from .registry import create_scaffold

    module_id = slugify(args.name)
    target = Path(args.dir) if args.dir else Path.cwd() / module_id
    report = create_scaffold(module_id, args.kind, target, git=not args.no_git)
    if args.json:
        emit_json(report.to_dict())
    else:
        emit(table([("module", report.module_id), ("directory", report.directory),
                    ("files", ", ".join(report.files)), ("commit", report.commit or "(no git)")]))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .registry import BuiltinRoot, validate

    paths = list(args.paths)
    if args.canonical:
        root = BuiltinRoot()
        paths += [str(root.directory / mid) for mid in root.ids()]
    if not paths:
        raise UsageError("give module directories to validate, or --canonical")
    reports = []
    for p in paths:
        try:
            reports.append(validate(p))
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    bad = any(r.violations if args.strict else r.errors for r in reports)
    if args.json:
        emit_json([r.to_dict() for r in reports])
    else:
        rows = []
        for r in reports:
            if not r.violations:
                rows.append((r.module_id or "?", "ok", "", r.path))
            for v in r.violations:
                rows.append((r.module_id or "?", v.severity, v.rule, v.message))
        emit(table(rows, ("module", "status", "rule", "detail")))
    return EXIT_VIOLATIONS if bad else EXIT_OK


def _report_rows(report) -> list[tuple]:
    rows = []
    for result in report.metrics:
        cis = report.cis.get(result.module_id, {})
        for k, v in result.values.items():
            ci = cis.get(k)
            rows.append((result.module_id, k, v, ci.low if ci else None, ci.high if ci else None))
    return rows


def cmd_run(args) -> int:
    from .evaluator import SubprocessProvider, evaluate_task

    provider = SubprocessProvider(shlex.split(args.provider_cmd), model=args.model, batch_size=args.batch_size,
                                  timeout_s=args.timeout, max_in_flight=args.max_in_flight)
    label_map = json.loads(args.label_map) if args.label_map else None
    report = evaluate_task(args.task, args.dataset, provider, args.metrics, ci=args.ci, level=args.level,
                           iterations=args.iterations, seed=args.seed, artifact_path=args.artifact,
                           label_mapping=label_map, metric_params=_params(args.param))
    if args.json:
        emit(report.to_json())
    else:
        ds = report.dataset
        emit(table([("task", report.task), ("dataset", f"{ds['path']} (sha256 {ds['sha256'][:12]}, "
                                                       f"{ds['rows']} rows)"),
                    ("model", report.provider.get("model")), ("seed", report.seed),
                    ("artifact", report.artifact_path)]))
        emit("")
        emit(table(_report_rows(report), ("module", "key", "value", "ci_low", "ci_high")))
        emit("")
        p = report.perf
        lat = p.latency_ms
        emit(table([("examples", p.n_examples), ("batch_size", p.batch_size), ("total_time_s", p.total_time_s),
                    ("throughput_per_s", p.throughput)] + [(f"latency_{k}_ms", lat[k]) for k in lat]))
    if args.figures:
        from .plotting import plot_latency, plot_metric_cis

        flat_cis = {k: ci.to_dict() for keys in report.cis.values() for k, ci in keys.items()}
        for path in (plot_latency(report.perf.to_dict(), args.figures),
                     plot_metric_cis(report.values(), flat_cis, args.figures)):
            note(f"wrote {path}")
    return EXIT_OK


def _read_rows(path: str) -> list[dict]:
    from .errors import DatasetParseError
    from .evaluator.tasks import read_jsonl

    rows = read_jsonl(path)
    if not rows:
        raise DatasetParseError(f"dataset {path} has no records")
    return rows


def _columns(rows: list[dict], names: Sequence[str], path: str) -> dict[str, list]:
    cols = {}
    for name in names:
        missing = [i for i, r in enumerate(rows, start=1) if name not in r]
        if missing:
            raise SchemaMismatch(f"{path}: column {name!r} missing (first at record {missing[0]})")
        cols[name] = [r[name] for r in rows]
    return cols


def cmd_compare(args) -> int:
    from .registry import load

    rows = _read_rows(args.dataset)
    cols = _columns(rows, ("predictions_a", "predictions_b", "references"), args.dataset)
    if args.test == "mcnemar":
        result = load("mcnemar").compute(cols)
    else:
        result = load("paired_bootstrap").compute(cols, metric=args.metric, iterations=args.iterations,
                                                  seed=args.seed)
    if args.json:
        emit_json({"test": args.test, "result": result.to_dict(), "convention": CONVENTIONS[args.test]})
    else:
        emit(table([(k, v) for k, v in result.values.items()], ("key", "value")))
        emit(CONVENTIONS[args.test])
    return EXIT_OK


def cmd_measure(args) -> int:
    from .registry import default_registry
    from .schema import ModuleKind

    reg = default_registry()
    modules = []
    for mid in args.measurements:
        m = reg.load(mid)
        if m.kind is not ModuleKind.MEASUREMENT:
            raise UnknownModule(f"{mid!r} is a {m.kind.value}, not a measurement")
        modules.append(m)
    rows = _read_rows(args.dataset)
    data = _columns(rows, (args.column,), args.dataset)[args.column]
    params = _params(args.param)
    results = [m.compute({"data": data}, **params.get(m.id, {})) for m in modules]
    if args.json:
        emit_json([r.to_dict() for r in results])
    else:
        blocks = []
        for r in results:
            blocks.append(f"[{r.module_id}]\n" + table([(k, v) for k, v in r.values.items()]))
        emit("\n\n".join(blocks))
    if args.figures:
        from .plotting import plot_measurement

        for r in results:
            path = plot_measurement(r.module_id, r.values, args.figures)
            if path:
                note(f"wrote {path}")
    return EXIT_OK


def _service(args):
    from .service import Service

    owners = json.loads(Path(args.owners).read_text()) if getattr(args, "owners", None) else None
    return Service(args.store, owners=owners, allow_commands=getattr(args, "allow_provider_commands", False))


def cmd_serve(args) -> int:
    from .service import serve

    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(name)s %(message)s")
    serve(_service(args), args.host, args.port, workers=args.workers)
    return EXIT_OK


def _job_rows(job) -> list[tuple]:
    return [("id", job.id), ("state", job.state), ("task", job.spec["task"]),
            ("dataset", job.spec["dataset"]["name"]), ("metrics", ",".join(job.spec["metrics"])),
            ("models", ",".join(p["model"] for p in job.spec["providers"])),
            ("failure", job.failure or ""), ("proposals", ",".join(job.proposal_ids))]


def _proposal_rows(p) -> list[tuple]:
    return [("id", p.id), ("model", p.model), ("state", p.state), ("verified", p.verified),
            ("dataset", p.dataset["name"]), ("task", p.task or "")] + [(k, v) for k, v in sorted(p.values.items())]


def cmd_jobs(args) -> int:
    svc = _service(args)
    action = args.jobs_command
    if action == "submit":
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        job = svc.submit_job(spec, rerun=args.rerun)
        out, rows = job.to_dict(), _job_rows(job)
    elif action == "show":
        job = svc.get_job(args.job_id)
        out, rows = job.to_dict(), _job_rows(job)
    elif action == "list":
        jobs = svc.list_jobs(args.state, args.limit)
        if args.json:
            emit_json([j.to_dict() for j in jobs])
        else:
            emit(table([(j.id, j.state, j.spec["task"], j.spec["dataset"]["name"], j.failure or "") for j in jobs],
                       ("id", "state", "task", "dataset", "failure")))
        return EXIT_OK
    elif action == "work":
        n = svc.run_worker(max_jobs=args.max_jobs)
        out, rows = {"processed": n}, [("processed", n)]
    elif action == "proposals":
        props = svc.list_proposals(model=args.model, dataset=args.dataset)
        if args.json:
            emit_json([p.to_dict() for p in props])
        else:
            emit(table([(p.id, p.model, p.dataset["name"], p.state, p.verified) for p in props],
                       ("id", "model", "dataset", "state", "verified")))
        return EXIT_OK
    elif action == "review":
        token = args.token or os.environ.get("EVALKIT_OWNER_TOKEN")
        p = svc.review_proposal(args.proposal_id, args.decision, token)
        out, rows = p.to_dict(), _proposal_rows(p)
    elif action == "import":
        p = svc.import_self_reported(args.model, args.dataset, args.metric, args.value, args.note, args.task)
        out, rows = p.to_dict(), _proposal_rows(p)
    elif action == "card":
        card = svc.model_card(args.model)
        if args.json:
            emit_json(card)
        else:
            emit(table([(r["proposal_id"], r["task"] or "", r["dataset"]["name"], m["name"], m["value"],
                         r["verified"]) for r in card["results"] for m in r["metrics"]],
                       ("proposal", "task", "dataset", "metric", "value", "verified")))
        return EXIT_OK
    else:  # pragma: no cover - argparse enforces the choices
        raise UsageError(f"unknown jobs command {action!r}")
    if args.json:
        emit_json(out)
    else:
        emit(table(rows))
    return EXIT_OK


def cmd_leaderboard(args) -> int:
    svc = _service(args)
    entries = svc.get_leaderboard(args.dataset, args.metric, task=args.task, verified_only=args.verified_only,
                                  include_closed=args.include_closed, approved_only=args.approved_only)
    if args.json:
        emit_json([e.to_dict() for e in entries])
    else:
        emit(table([(e.rank, e.model, e.value, "verified" if e.verified else "self-reported", e.state,
                     e.proposal_id) for e in entries],
                   ("rank", "model", args.metric, "source", "state", "proposal")))
    if args.figures and entries:
        from .plotting import plot_leaderboard

        note(f"wrote {plot_leaderboard([e.to_dict() for e in entries], args.metric, args.figures)}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evalkit", description="Evaluate models, compare them, and measure datasets.")
    p.add_argument("--version", action="version", version=f"evalkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, figures: bool = False):
        sp.add_argument("--json", action="store_true", help="structured output")
        if figures:
            sp.add_argument("--figures", metavar="DIR", help="also write PNG figures to DIR")

    def store_flags(sp):
        sp.add_argument("--store", default=None, help="service directory (default $EVALKIT_SERVICE_DIR "
                                                      "or ./.evalkit-service)")
        sp.add_argument("--owners", help="JSON file mapping model-name prefixes to owner tokens")
        sp.add_argument("--allow-provider-commands", action="store_true",
                        help="accept raw provider commands in job specs (runs arbitrary programs)")

    sp = sub.add_parser("create", help="scaffold a new module")
    sp.add_argument("name")
    sp.add_argument("--kind", default="metric", choices=["metric", "comparison", "measurement"])
    sp.add_argument("--dir", help="target directory (default ./<module id>)")
    sp.add_argument("--no-git", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_create)

    sp = sub.add_parser("validate", help="check module manifests and cards")
    sp.add_argument("paths", nargs="*")
    sp.add_argument("--canonical", action="store_true", help="also validate every built-in module")
    sp.add_argument("--strict", action="store_true", help="treat warnings as violations")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="evaluate a provider on a dataset for a task")
    sp.add_argument("--task", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--provider-cmd", required=True, help="provider command line; {python} = this interpreter")
    sp.add_argument("--model", help="model name to record (default: from the provider handshake)")
    sp.add_argument("--metrics", type=_csv, default=None, help="comma-separated module ids")
    sp.add_argument("--param", action="append", default=[], metavar="MODULE.NAME=VALUE")
    sp.add_argument("--label-map", help="JSON object of label name -> class id")
    sp.add_argument("--ci", action="store_true", help="attach bootstrap confidence intervals")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--iterations", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--timeout", type=float, default=30.0, help="seconds per batch")
    sp.add_argument("--max-in-flight", type=int, default=1)
    sp.add_argument("--artifact", help="predictions artifact path (default: a new temp directory)")
    common(sp, figures=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="test whether two prediction columns differ")
    sp.add_argument("--dataset", required=True, help="JSONL with predictions_a, predictions_b, references")
    sp.add_argument("--test", choices=["mcnemar", "bootstrap"], default="mcnemar")
    sp.add_argument("--metric", default="accuracy", help="metric for the bootstrap test")
    sp.add_argument("--iterations", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("measure", help="describe a dataset column")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--measurements", type=_csv, required=True)
    sp.add_argument("--column", default="data")
    sp.add_argument("--param", action="append", default=[], metavar="MODULE.NAME=VALUE")
    common(sp, figures=True)
    sp.set_defaults(func=cmd_measure)

    sp = sub.add_parser("serve", help="run the HTTP API and job workers")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--workers", type=int, default=1)
    store_flags(sp)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("jobs", help="submit and manage evaluation jobs locally")
    jobs = sp.add_subparsers(dest="jobs_command", required=True, parser_class=_Parser)
    j = jobs.add_parser("submit")
    j.add_argument("spec", help="job spec JSON file")
    j.add_argument("--rerun", action="store_true", help="queue a new job even if an identical one exists")
    j = jobs.add_parser("show")
    j.add_argument("job_id")
    j = jobs.add_parser("list")
    j.add_argument("--state")
    j.add_argument("--limit", type=int, default=100)
    j = jobs.add_parser("work", help="process queued jobs, then exit")
    j.add_argument("--max-jobs", type=int)
    j = jobs.add_parser("proposals")
    j.add_argument("--model")
    j.add_argument("--dataset")
    j = jobs.add_parser("review")
    j.add_argument("proposal_id")
    j.add_argument("decision", choices=["approve", "close"])
    j.add_argument("--token", help="owner token (default $EVALKIT_OWNER_TOKEN)")
    j = jobs.add_parser("import", help="record a self-reported result")
    j.add_argument("--model", required=True)
    j.add_argument("--dataset", required=True)
    j.add_argument("--metric", required=True)
    j.add_argument("--value", type=float, required=True)
    j.add_argument("--note")
    j.add_argument("--task")
    j = jobs.add_parser("card", help="approved results for a model")
    j.add_argument("model")
    for j in jobs.choices.values():
        store_flags(j)
        common(j)
    sp.set_defaults(func=cmd_jobs)

    sp = sub.add_parser("leaderboard", help="ranked results for a dataset and metric")
    sp.add_argument("--dataset", required=True, help="dataset name or sha256")
    sp.add_argument("--metric", required=True)
    sp.add_argument("--task")
    sp.add_argument("--verified-only", action="store_true")
    sp.add_argument("--include-closed", action="store_true")
    sp.add_argument("--approved-only", action="store_true")
    store_flags(sp)
    common(sp, figures=True)
    sp.set_defaults(func=cmd_leaderboard)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except EvalkitError as exc:
        note(f"error: {exc.code}: {exc}")
        return EXIT_USER if exc.user_error else EXIT_INTERNAL
    except (OSError, ValueError) as exc:
        # bad paths, unreadable files, malformed JSON flags
        note(f"error: {type(exc).__name__}: {exc}")
        return EXIT_USER
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:
        note(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
