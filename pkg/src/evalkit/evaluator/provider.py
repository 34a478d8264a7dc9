"""Prediction providers: the model side of an evaluation.

Wire protocol ``evalkit-provider/1``: UTF-8 JSON, one object per line, over the
provider process's stdin (requests) and stdout (responses). Stderr is free-form
and captured for crash reports.

1. harness -> provider  ``{"type": "hello", "protocol": "evalkit-provider/1", "task": "<task id>"}``
2. provider -> harness  ``{"type": "hello", "protocol": "evalkit-provider/1", "model": "<name>"}``
3. harness -> provider  one request per example, a batch at a time:
   ``{"id": "<example id>", "inputs": {...}}``
4. provider -> harness  exactly one line per request, in any order:
   ``{"id": "<example id>", "prediction": <any JSON>}`` or ``{"id": "<example id>", "error": "<message>"}``
5. harness closes stdin when done; the provider should exit.

Byte-level example for one text-classification request::

    > {"type":"hello","protocol":"evalkit-provider/1","task":"text-classification"}\\n
    < {"type":"hello","protocol":"evalkit-provider/1","model":"demo"}\\n
    > {"id":"0","inputs":{"text":"great film"}}\\n
    < {"id":"0","prediction":"positive"}\\n

A response with an unknown or already-answered id, or a line that is not a
JSON object, is a protocol violation. A batch not fully answered within the
timeout is a :class:`ResponseTimeout`; rows are never skipped.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from ..errors import ProviderCrash, ProviderError, ProviderProtocolViolation, ResponseTimeout

PROTOCOL = "evalkit-provider/1"
DEFAULT_TIMEOUT_S = 30.0
_EOF = object()


@dataclass
class ProviderRun:
    predictions: dict[str, Any]
    timings: list[tuple[int, float]]  # (batch size, seconds)
    total_time_s: float
    model: str


def _batches(requests: Sequence[tuple[str, Any]], size: int) -> list[list[tuple[str, Any]]]:
    return [list(requests[i:i + size]) for i in range(0, len(requests), size)]


class Provider:
    """Interface: ``run(task_id, requests) -> ProviderRun``."""

    batch_size: int = 1
    model: str = ""

    def run(self, task_id: str, requests: Sequence[tuple[str, Mapping[str, Any]]]) -> ProviderRun:
        raise NotImplementedError

    def describe(self) -> dict[str, Any]:
        raise NotImplementedError


class FunctionProvider(Provider):
    """In-process provider: ``predict(list_of_inputs) -> list_of_predictions``."""

    def __init__(self, predict: Callable[[list[Mapping[str, Any]]], Sequence[Any]], model: str = "in-process",
                 batch_size: int = 8):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.predict = predict
        self.model = model
        self.batch_size = batch_size

    def run(self, task_id: str, requests: Sequence[tuple[str, Mapping[str, Any]]]) -> ProviderRun:
        predictions: dict[str, Any] = {}
        timings = []
        start = time.perf_counter()
        for batch in _batches(requests, self.batch_size):
            t0 = time.perf_counter()
            out = list(self.predict([inputs for _, inputs in batch]))
            timings.append((len(batch), time.perf_counter() - t0))
            if len(out) != len(batch):
                raise ProviderProtocolViolation(f"predict returned {len(out)} predictions for {len(batch)} inputs")
            for (rid, _), pred in zip(batch, out):
                predictions[rid] = pred
        return ProviderRun(predictions, timings, time.perf_counter() - start, self.model)

    def describe(self) -> dict[str, Any]:
        return {"kind": "function", "model": self.model, "batch_size": self.batch_size}


class SubprocessProvider(Provider):
    """Provider process speaking ``evalkit-provider/1`` over stdio.

    ``max_in_flight > 1`` pipelines that many batches; metric values are
    unaffected, only the timings change.
    """

    def __init__(self, command: Sequence[str] | str, model: str | None = None, batch_size: int = 8,
                 timeout_s: float = DEFAULT_TIMEOUT_S, max_in_flight: int = 1,
                 env: Mapping[str, str] | None = None, cwd: str | None = None):
        if batch_size < 1 or max_in_flight < 1:
            raise ValueError("batch_size and max_in_flight must be positive")
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty provider command")
        self.declared_model = model
        self.model = model or ""
        self.batch_size = batch_size
        self.timeout_s = timeout_s
        self.max_in_flight = max_in_flight
        self.env = dict(env) if env is not None else None
        self.cwd = cwd

    def describe(self) -> dict[str, Any]:
        return {"kind": "subprocess", "command": self.command, "model": self.model,
                "batch_size": self.batch_size}

    def _argv(self) -> list[str]:
        return [sys.executable if c == "{python}" else c for c in self.command]

    def run(self, task_id: str, requests: Sequence[tuple[str, Mapping[str, Any]]]) -> ProviderRun:
        stderr_file = tempfile.TemporaryFile(mode="w+b")
        env = None
        if self.env is not None:
            env = dict(os.environ, **self.env)
        try:
            proc = subprocess.Popen(self._argv(), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    stderr=stderr_file, env=env, cwd=self.cwd)
        except OSError as exc:
            stderr_file.close()
            raise ProviderCrash(f"cannot start provider {self.command}: {exc}") from exc
        lines: queue.Queue = queue.Queue()

        def pump() -> None:
            assert proc.stdout is not None
            for raw in proc.stdout:
                lines.put(raw)
            lines.put(_EOF)

        reader = threading.Thread(target=pump, daemon=True)
        reader.start()
        session = _Session(proc, lines, stderr_file, self.timeout_s)
        try:
            session.send({"type": "hello", "protocol": PROTOCOL, "task": task_id})
            hello = session.receive(time.monotonic() + self.timeout_s, "handshake")
            if hello.get("type") != "hello" or hello.get("protocol") != PROTOCOL:
                raise ProviderProtocolViolation(f"bad handshake from provider: {hello!r}")
            model = str(hello.get("model") or self.declared_model or self.command[-1])
            if self.declared_model is None:
                self.model = model
            run = self._exchange(session, requests)
            run.model = self.declared_model or model
            return run
        finally:
            session.close()
            reader.join(timeout=5)
            stderr_file.close()

    def _exchange(self, session: "_Session", requests: Sequence[tuple[str, Mapping[str, Any]]]) -> ProviderRun:
        batches = _batches(requests, self.batch_size)
        owner: dict[str, int] = {}
        outstanding = [0] * len(batches)
        sent_at = [0.0] * len(batches)
        durations: dict[int, float] = {}
        predictions: dict[str, Any] = {}
        next_batch = 0
        in_flight: list[int] = []
        start = time.perf_counter()
        while len(durations) < len(batches):
            while next_batch < len(batches) and len(in_flight) < self.max_in_flight:
                b = next_batch
                sent_at[b] = time.perf_counter()
                for rid, inputs in batches[b]:
                    owner[rid] = b
                    session.send({"id": rid, "inputs": inputs})
                session.flush()
                outstanding[b] = len(batches[b])
                in_flight.append(b)
                next_batch += 1
            oldest = in_flight[0]
            deadline = time.monotonic() + self.timeout_s - (time.perf_counter() - sent_at[oldest])
            msg = session.receive(deadline, f"batch {oldest}")
            rid = msg.get("id")
            if not isinstance(rid, str) or rid not in owner:
                raise ProviderProtocolViolation(f"response for unknown request id {rid!r}")
            if rid in predictions:
                raise ProviderProtocolViolation(f"duplicate response for request id {rid!r}")
            if "error" in msg:
                raise ProviderError(f"provider failed on example {rid!r}: {msg['error']}")
            if "prediction" not in msg:
                raise ProviderProtocolViolation(f"response for {rid!r} has neither prediction nor error")
            predictions[rid] = msg["prediction"]
            b = owner[rid]
            outstanding[b] -= 1
            if outstanding[b] == 0:
                durations[b] = time.perf_counter() - sent_at[b]
                in_flight.remove(b)
        total = time.perf_counter() - start
        timings = [(len(batches[b]), durations[b]) for b in range(len(batches))]
        return ProviderRun(predictions, timings, total, self.model)


class _Session:
    def __init__(self, proc: subprocess.Popen, lines: queue.Queue, stderr_file, timeout_s: float):
        self.proc = proc
        self.lines = lines
        self.stderr_file = stderr_file
        self.timeout_s = timeout_s

    def stderr(self) -> str:
        try:
            self.stderr_file.flush()
            self.stderr_file.seek(0)
            return self.stderr_file.read().decode("utf-8", errors="replace")[-4000:]
        except (OSError, ValueError):
            return ""

    def _crash(self, what: str) -> ProviderCrash:
        try:
            code = self.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            code = None
        return ProviderCrash(f"provider exited (status {code}) during {what}", self.stderr())

    def send(self, obj: Mapping[str, Any]) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write((json.dumps(obj, ensure_ascii=False) + "\n").encode("utf-8"))
        except (BrokenPipeError, OSError):
            raise self._crash("a request write") from None

    def flush(self) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise self._crash("a request write") from None

    def receive(self, deadline: float, what: str) -> dict[str, Any]:
        self.flush()
        remaining = deadline - time.monotonic()
        try:
            raw = self.lines.get(timeout=max(remaining, 0.0))
        except queue.Empty:
            raise ResponseTimeout(f"no complete response for {what} within {self.timeout_s:g} s") from None
        if raw is _EOF:
            raise self._crash(what)
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise ProviderProtocolViolation(f"provider wrote a non-JSON line: {raw[:200]!r}") from None
        if not isinstance(msg, dict):
            raise ProviderProtocolViolation(f"provider wrote a non-object line: {raw[:200]!r}")
        return msg

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
