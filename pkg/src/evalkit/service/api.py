"""JSON-over-HTTP front end for :class:`Service` (stdlib ``http.server``).

Routes::

    POST /jobs                      body: job spec (+ "rerun": bool)     -> job
    GET  /jobs                      ?state=                              -> {"jobs": [...]}
    GET  /jobs/{id}                                                      -> job
    GET  /proposals                 ?model=&dataset=&state=              -> {"proposals": [...]}
    GET  /proposals/{id}                                                 -> proposal
    GET  /proposals/{id}/report                                          -> evaluation report
    POST /proposals/{id}/review     body: {"decision": "approve"|"close"}; Authorization: Bearer <token>
    GET  /leaderboards              ?dataset=&metric=&task=&verified=&include_closed=&approved_only=
    POST /results/self-reported     body: {"model", "dataset", "metric", "value", "note"?, "task"?}
    GET  /models/{name}/card

Errors come back as ``{"error": {"code": ..., "message": ...}}`` (plus
``fields`` for an invalid spec) with a matching HTTP status.
"""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, unquote, urlsplit

from ..errors import EvalkitError, InvalidSpec, InvalidValue, NotFound
from .core import Service

log = logging.getLogger("evalkit.service")

MAX_BODY = 1 << 20

STATUS = {
    "InvalidSpec": HTTPStatus.BAD_REQUEST,
    "DatasetUnreadable": HTTPStatus.BAD_REQUEST,
    "InvalidValue": HTTPStatus.BAD_REQUEST,
    "UnknownMetric": HTTPStatus.BAD_REQUEST,
    "UnknownMetricDirection": HTTPStatus.BAD_REQUEST,
    "UnknownTask": HTTPStatus.BAD_REQUEST,
    "NotFound": HTTPStatus.NOT_FOUND,
    "AlreadyDecided": HTTPStatus.CONFLICT,
    "Unauthorized": HTTPStatus.FORBIDDEN,
}


def _flag(query: dict[str, list[str]], name: str) -> bool:
    value = query.get(name, ["false"])[-1].lower()
    if value not in ("1", "0", "true", "false", "yes", "no"):
        raise InvalidValue(f"query parameter {name} must be a boolean, got {value!r}")
    return value in ("1", "true", "yes")


class _Handler(BaseHTTPRequestHandler):
    service: Service
    server_version = "evalkit"

    def log_message(self, fmt: str, *args: Any) -> None:
        log.info("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, payload: Any) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise InvalidSpec("request body too large", {"body": f"limit is {MAX_BODY} bytes"})
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw or b"{}")
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise InvalidSpec("request body is not JSON", {"body": "invalid JSON"}) from None

    def _token(self, body: Any) -> str | None:
        auth = self.headers.get("Authorization", "")
        if auth.lower().startswith("bearer "):
            return auth[7:].strip()
        return body.get("token") if isinstance(body, dict) else None

    def _dispatch(self, method: str) -> None:
        url = urlsplit(self.path)
        parts = [unquote(p) for p in url.path.strip("/").split("/") if p]
        query = parse_qs(url.query)
        try:
            handler, args = self._route(method, parts)
            status, payload = handler(self, query, *args)
            self._send(status, payload)
        except EvalkitError as exc:
            err: dict[str, Any] = {"code": exc.code, "message": str(exc)}
            if isinstance(exc, InvalidSpec) and exc.fields:
                err["fields"] = exc.fields
            self._send(STATUS.get(exc.code, HTTPStatus.INTERNAL_SERVER_ERROR), {"error": err})
        except Exception as exc:  # never leak a traceback to clients
            log.exception("unhandled error on %s %s", method, self.path)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR,
                       {"error": {"code": "InternalError", "message": type(exc).__name__}})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def _route(self, method: str, parts: list[str]) -> tuple[Callable, tuple]:
        n = len(parts)
        table = {
            ("POST", "jobs", 1): _post_job,
            ("GET", "jobs", 1): _list_jobs,
            ("GET", "jobs", 2): _get_job,
            ("GET", "proposals", 1): _list_proposals,
            ("GET", "proposals", 2): _get_proposal,
            ("GET", "leaderboards", 1): _leaderboard,
            ("GET", "models", 3): _model_card,
        }
        if n == 3 and parts[0] == "proposals" and parts[2] == "review" and method == "POST":
            return _review, (parts[1],)
        if n == 3 and parts[0] == "proposals" and parts[2] == "report" and method == "GET":
            return _get_report, (parts[1],)
        if n == 2 and parts == ["results", "self-reported"] and method == "POST":
            return _self_reported, ()
        if n == 3 and parts[0] == "models" and parts[2] != "card":
            raise NotFound(f"no route {method} {self.path}")
        key = (method, parts[0] if parts else "", n)
        if key not in table:
            raise NotFound(f"no route {method} {self.path}")
        return table[key], tuple(parts[1:2])


def _post_job(h: _Handler, query) -> tuple[int, Any]:
    body = h._body()
    if not isinstance(body, dict):
        raise InvalidSpec("job spec must be an object", {"spec": "not an object"})
    rerun = bool(body.pop("rerun", False))
    job = h.service.submit_job(body, rerun=rerun)
    return HTTPStatus.CREATED, job.to_dict()


def _list_jobs(h: _Handler, query) -> tuple[int, Any]:
    state = query.get("state", [None])[-1]
    return HTTPStatus.OK, {"jobs": [j.to_dict() for j in h.service.list_jobs(state)]}


def _get_job(h: _Handler, query, job_id: str) -> tuple[int, Any]:
    return HTTPStatus.OK, h.service.get_job(job_id).to_dict()


def _list_proposals(h: _Handler, query) -> tuple[int, Any]:
    states = tuple(query["state"]) if "state" in query else None
    props = h.service.list_proposals(model=query.get("model", [None])[-1],
                                     dataset=query.get("dataset", [None])[-1], states=states)
    return HTTPStatus.OK, {"proposals": [p.to_dict() for p in props]}


def _get_proposal(h: _Handler, query, pid: str) -> tuple[int, Any]:
    return HTTPStatus.OK, h.service.get_proposal(pid).to_dict()


def _get_report(h: _Handler, query, pid: str) -> tuple[int, Any]:
    report = h.service.get_report(pid)
    if report is None:
        raise NotFound(f"proposal {pid} is self-reported and has no evaluation report")
    return HTTPStatus.OK, report.to_dict()


def _review(h: _Handler, query, pid: str) -> tuple[int, Any]:
    body = h._body()
    decision = body.get("decision") if isinstance(body, dict) else None
    return HTTPStatus.OK, h.service.review_proposal(pid, decision, h._token(body)).to_dict()


def _leaderboard(h: _Handler, query) -> tuple[int, Any]:
    dataset = query.get("dataset", [None])[-1]
    metric = query.get("metric", [None])[-1]
    if not dataset or not metric:
        raise InvalidValue("dataset and metric query parameters are required")
    entries = h.service.get_leaderboard(dataset, metric, task=query.get("task", [None])[-1],
                                        verified_only=_flag(query, "verified"),
                                        include_closed=_flag(query, "include_closed"),
                                        approved_only=_flag(query, "approved_only"))
    return HTTPStatus.OK, {"dataset": dataset, "metric": metric, "entries": [e.to_dict() for e in entries]}


def _self_reported(h: _Handler, query) -> tuple[int, Any]:
    body = h._body()
    if not isinstance(body, dict):
        raise InvalidValue("body must be an object")
    p = h.service.import_self_reported(body.get("model"), body.get("dataset"), body.get("metric"),
                                       body.get("value"), body.get("note"), body.get("task"))
    return HTTPStatus.CREATED, p.to_dict()


def _model_card(h: _Handler, query, name: str) -> tuple[int, Any]:
    return HTTPStatus.OK, h.service.model_card(name)


def make_server(service: Service, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve(service: Service, host: str = "127.0.0.1", port: int = 8000, workers: int = 1,
          ready: threading.Event | None = None, stop: threading.Event | None = None) -> None:
    """Run the API plus ``workers`` background job workers until interrupted."""
    server = make_server(service, host, port)
    stop = stop or threading.Event()
    threads = [threading.Thread(target=service.run_worker, kwargs={"stop": stop, "idle_exit": False},
                                name=f"evalkit-worker-{i}", daemon=True) for i in range(workers)]
    for t in threads:
        t.start()
    api = threading.Thread(target=server.serve_forever, name="evalkit-api", daemon=True)
    api.start()
    log.info("serving on http://%s:%d with %d worker(s)", *server.server_address[:2], workers)
    if ready is not None:
        ready.set()
    try:
        stop.wait()
    except KeyboardInterrupt:
        stop.set()
    finally:
        server.shutdown()
        server.server_close()
        for t in threads:
            t.join(timeout=10)
