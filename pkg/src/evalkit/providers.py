"""Deterministic dummy prediction providers speaking ``evalkit-provider/1``.

Run as a subprocess::

    python -m evalkit.providers oracle --dataset data.jsonl
    python -m evalkit.providers constant --value positive

``oracle`` answers every request with the dataset's own reference for that
id (a perfect model). ``constant`` answers with one fixed value.
``--fail-after N`` writes a message to stderr and exits with status 3 after N
requests, which is how crash handling gets exercised.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Any, Callable

PROTOCOL = "evalkit-provider/1"


def _oracle_answers(dataset: str, task_id: str) -> dict[str, Any]:
    from .evaluator.tasks import get_task, read_jsonl

    task = get_task(task_id)
    answers = {}
    for i, row in enumerate(read_jsonl(dataset)):
        ref = row[task.reference_column]
        if task.task_id == "question-answering-extractive":
            ref = task.reference(row)
        answers[str(row.get("id", i))] = ref
    return answers


def serve(make_answer: Callable[[str, dict, str], Any], model: str, stdin=None, stdout=None,
          fail_after: int | None = None, delay_s: float = 0.0) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    hello = json.loads(stdin.readline() or "{}")
    if hello.get("protocol") != PROTOCOL:
        print(f"unsupported protocol {hello.get('protocol')!r}", file=sys.stderr)
        return 2
    task_id = hello.get("task", "")
    stdout.write(json.dumps({"type": "hello", "protocol": PROTOCOL, "model": model}) + "\n")
    stdout.flush()
    handled = 0
    for line in stdin:
        if not line.strip():
            continue
        if fail_after is not None and handled >= fail_after:
            print(f"dummy provider: simulated failure after {handled} requests", file=sys.stderr)
            sys.stderr.flush()
            return 3
        req = json.loads(line)
        if delay_s:
            time.sleep(delay_s)
        try:
            out = {"id": req["id"], "prediction": make_answer(req["id"], req.get("inputs", {}), task_id)}
        except KeyError as exc:
            out = {"id": req["id"], "error": f"no answer for {exc}"}
        stdout.write(json.dumps(out) + "\n")
        stdout.flush()
        handled += 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m evalkit.providers", description=__doc__.split("\n")[0])
    parser.add_argument("kind", choices=["oracle", "constant"])
    parser.add_argument("--dataset", help="dataset file (oracle)")
    parser.add_argument("--value", help="JSON value or bare string to answer with (constant)")
    parser.add_argument("--model", help="model name announced in the handshake")
    parser.add_argument("--fail-after", type=int)
    parser.add_argument("--delay", type=float, default=0.0, help="seconds to sleep per request")
    args = parser.parse_args(argv)

    if args.kind == "oracle":
        if not args.dataset:
            parser.error("oracle needs --dataset")
        cache: dict[str, dict] = {}

        def answer(rid, inputs, task_id):
            if task_id not in cache:
                cache[task_id] = _oracle_answers(args.dataset, task_id)
            return cache[task_id][rid]
        model = args.model or "dummy-oracle"
    else:
        if args.value is None:
            parser.error("constant needs --value")
        try:
            value = json.loads(args.value)
        except json.JSONDecodeError:
            value = args.value

        def answer(rid, inputs, task_id):
            return value
        model = args.model or f"dummy-constant-{args.value}"
    return serve(answer, model, fail_after=args.fail_after, delay_s=args.delay)


if __name__ == "__main__":
    sys.exit(main())
