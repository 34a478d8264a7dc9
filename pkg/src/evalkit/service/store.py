"""Persistence: one SQLite file plus a content-addressed blob directory.

Every state change is a single transaction guarded by the row's current
state, so concurrent workers and API handlers cannot race a job or proposal
into an illegal state.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import sqlite3
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from ..errors import AlreadyDecided, NotFound
from .ulid import new_ulid

QUEUED, RUNNING, SUCCEEDED, FAILED = "queued", "running", "succeeded", "failed"
JOB_STATES = (QUEUED, RUNNING, SUCCEEDED, FAILED)
PROPOSED, APPROVED, CLOSED = "proposed", "approved", "closed"

# Legal job transitions. RUNNING -> QUEUED exists only for crash recovery and
# is allowed once per job (see Store.recover).
JOB_TRANSITIONS = {
    QUEUED: {RUNNING},
    RUNNING: {SUCCEEDED, FAILED, QUEUED},
    SUCCEEDED: set(),
    FAILED: set(),
}

SCHEMA = """
CREATE TABLE IF NOT EXISTS jobs (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    id TEXT NOT NULL UNIQUE,
    idem_key TEXT NOT NULL,
    spec TEXT NOT NULL,
    state TEXT NOT NULL,
    submitted_at REAL NOT NULL,
    started_at REAL,
    finished_at REAL,
    failure TEXT,
    worker TEXT,
    lease_until REAL,
    recoveries INTEGER NOT NULL DEFAULT 0
);
CREATE INDEX IF NOT EXISTS jobs_state ON jobs(state, seq);
CREATE INDEX IF NOT EXISTS jobs_idem ON jobs(idem_key, seq);
CREATE TABLE IF NOT EXISTS proposals (
    id TEXT PRIMARY KEY,
    job_id TEXT,
    model TEXT NOT NULL,
    task TEXT,
    dataset_name TEXT NOT NULL,
    dataset_sha256 TEXT,
    dataset TEXT NOT NULL,
    metric_values TEXT NOT NULL,
    report_blob TEXT,
    artifact_blob TEXT,
    state TEXT NOT NULL,
    verified INTEGER NOT NULL,
    source_note TEXT,
    created_at REAL NOT NULL,
    decided_at REAL,
    UNIQUE (job_id, model)
);
CREATE INDEX IF NOT EXISTS proposals_dataset ON proposals(dataset_name, dataset_sha256);
CREATE INDEX IF NOT EXISTS proposals_model ON proposals(model);
"""


@dataclass
class JobRecord:
    id: str
    spec: dict[str, Any]
    state: str
    submitted_at: float
    started_at: float | None = None
    finished_at: float | None = None
    failure: str | None = None
    recoveries: int = 0
    proposal_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "spec": self.spec, "state": self.state, "submitted_at": self.submitted_at,
                "started_at": self.started_at, "finished_at": self.finished_at, "failure": self.failure,
                "recoveries": self.recoveries, "proposal_ids": list(self.proposal_ids)}


@dataclass
class ProposalRecord:
    id: str
    job_id: str | None
    model: str
    task: str | None
    dataset: dict[str, Any]
    values: dict[str, Any]
    state: str
    verified: bool
    created_at: float
    report_blob: str | None = None
    artifact_blob: str | None = None
    source_note: str | None = None
    decided_at: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "job_id": self.job_id, "model": self.model, "task": self.task,
                "dataset": self.dataset, "values": self.values, "state": self.state,
                "verified": self.verified, "created_at": self.created_at, "decided_at": self.decided_at,
                "report_blob": self.report_blob, "artifact_blob": self.artifact_blob,
                "source_note": self.source_note}


class BlobStore:
    """Files addressed by the sha256 of their content."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, digest: str) -> Path:
        if len(digest) != 64 or any(c not in "0123456789abcdef" for c in digest):
            raise NotFound(f"no blob {digest!r}")
        return self.root / digest[:2] / digest

    def _install(self, tmp: Path, digest: str) -> str:
        dest = self.path(digest)
        dest.parent.mkdir(parents=True, exist_ok=True)
        if dest.exists():
            tmp.unlink()
        else:
            os.replace(tmp, dest)
        return digest

    def put_bytes(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        tmp = self.root / f".tmp-{new_ulid()}"
        tmp.write_bytes(data)
        return self._install(tmp, digest)

    def put_file(self, src: str | os.PathLike) -> str:
        tmp = self.root / f".tmp-{new_ulid()}"
        h = hashlib.sha256()
        with open(src, "rb") as fin, open(tmp, "wb") as fout:
            for block in iter(lambda: fin.read(1 << 20), b""):
                h.update(block)
                fout.write(block)
        return self._install(tmp, h.hexdigest())

    def get_bytes(self, digest: str) -> bytes:
        p = self.path(digest)
        if not p.exists():
            raise NotFound(f"no blob {digest!r}")
        return p.read_bytes()


def worker_identity() -> str:
    return f"{socket.gethostname()}:{os.getpid()}:{new_ulid()}"


def _worker_dead(worker: str | None) -> bool:
    """True if ``worker`` ran on this host and its process is gone."""
    if not worker:
        return True
    host, _, rest = worker.partition(":")
    pid_text = rest.split(":", 1)[0]
    if host != socket.gethostname() or not pid_text.isdigit():
        return False
    pid = int(pid_text)
    if pid == os.getpid():
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return True
    except PermissionError:
        return False
    return False


class Store:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.db_path = self.root / "evalkit.sqlite3"
        self.blobs = BlobStore(self.root / "blobs")
        db = self.connect()
        try:
            db.execute("PRAGMA journal_mode=WAL")
            db.executescript(SCHEMA)
        finally:
            db.close()

    def connect(self) -> sqlite3.Connection:
        db = sqlite3.connect(self.db_path, timeout=30.0, isolation_level=None, check_same_thread=False)
        db.row_factory = sqlite3.Row
        db.execute("PRAGMA busy_timeout=30000")
        return db

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        db = self.connect()
        try:
            db.execute("BEGIN IMMEDIATE")
            try:
                yield db
            except BaseException:
                db.execute("ROLLBACK")
                raise
            db.execute("COMMIT")
        finally:
            db.close()

    # ------------------------------------------------------------------ jobs

    def _job(self, db: sqlite3.Connection, row: sqlite3.Row) -> JobRecord:
        pids = [r["id"] for r in db.execute("SELECT id FROM proposals WHERE job_id = ? ORDER BY id", (row["id"],))]
        return JobRecord(row["id"], json.loads(row["spec"]), row["state"], row["submitted_at"], row["started_at"],
                         row["finished_at"], row["failure"], row["recoveries"], pids)

    def insert_job(self, spec: dict[str, Any], idem_key: str, reuse: bool = True) -> tuple[JobRecord, bool]:
        """Insert a queued job, or return the newest job with the same key. Returns (job, created)."""
        with self.transaction() as db:
            if reuse:
                row = db.execute("SELECT * FROM jobs WHERE idem_key = ? ORDER BY seq DESC LIMIT 1",
                                 (idem_key,)).fetchone()
                if row is not None:
                    return self._job(db, row), False
            job_id = new_ulid()
            db.execute("INSERT INTO jobs (id, idem_key, spec, state, submitted_at) VALUES (?, ?, ?, ?, ?)",
                       (job_id, idem_key, json.dumps(spec, sort_keys=True), QUEUED, time.time()))
            row = db.execute("SELECT * FROM jobs WHERE id = ?", (job_id,)).fetchone()
            return self._job(db, row), True

    def get_job(self, job_id: str) -> JobRecord:
        db = self.connect()
        try:
            row = db.execute("SELECT * FROM jobs WHERE id = ?", (job_id,)).fetchone()
            if row is None:
                raise NotFound(f"no job {job_id!r}")
            return self._job(db, row)
        finally:
            db.close()

    def list_jobs(self, state: str | None = None, limit: int = 100) -> list[JobRecord]:
        db = self.connect()
        try:
            if state:
                rows = db.execute("SELECT * FROM jobs WHERE state = ? ORDER BY seq LIMIT ?", (state, limit))
            else:
                rows = db.execute("SELECT * FROM jobs ORDER BY seq LIMIT ?", (limit,))
            return [self._job(db, r) for r in rows.fetchall()]
        finally:
            db.close()

    def _move(self, db: sqlite3.Connection, job_id: str, src: str, dst: str, **cols: Any) -> bool:
        if dst not in JOB_TRANSITIONS[src]:
            raise ValueError(f"illegal job transition {src} -> {dst}")
        sets = ", ".join(["state = ?"] + [f"{k} = ?" for k in cols])
        cur = db.execute(f"UPDATE jobs SET {sets} WHERE id = ? AND state = ?",
                         (dst, *cols.values(), job_id, src))
        return cur.rowcount == 1

    def claim(self, worker: str, lease_s: float) -> JobRecord | None:
        """Atomically move the oldest queued job to running."""
        with self.transaction() as db:
            row = db.execute("SELECT * FROM jobs WHERE state = ? ORDER BY seq LIMIT 1", (QUEUED,)).fetchone()
            if row is None:
                return None
            now = time.time()
            self._move(db, row["id"], QUEUED, RUNNING, started_at=now, worker=worker, lease_until=now + lease_s)
            return self._job(db, db.execute("SELECT * FROM jobs WHERE id = ?", (row["id"],)).fetchone())

    def heartbeat(self, job_id: str, worker: str, lease_s: float) -> bool:
        with self.transaction() as db:
            cur = db.execute("UPDATE jobs SET lease_until = ? WHERE id = ? AND state = ? AND worker = ?",
                             (time.time() + lease_s, job_id, RUNNING, worker))
            return cur.rowcount == 1

    def finish(self, job_id: str, worker: str, ok: bool, failure: str | None = None) -> bool:
        """running -> succeeded/failed; False if this worker no longer owns the job."""
        with self.transaction() as db:
            row = db.execute("SELECT worker FROM jobs WHERE id = ? AND state = ?", (job_id, RUNNING)).fetchone()
            if row is None or row["worker"] != worker:
                return False
            return self._move(db, job_id, RUNNING, SUCCEEDED if ok else FAILED,
                              finished_at=time.time(), failure=failure, lease_until=None)

    def recover(self, now: float | None = None, force: bool = False) -> list[tuple[str, str]]:
        """Re-queue running jobs whose worker is gone.

        A job is stale when its lease expired or its worker process on this
        host no longer exists (``force`` treats every running job as stale).
        The first recovery puts it back in the queue; a job that is found
        stale again is failed instead, so a poisonous job cannot loop.
        Returns ``(job_id, new_state)`` pairs.
        """
        now = time.time() if now is None else now
        changed = []
        with self.transaction() as db:
            for row in db.execute("SELECT * FROM jobs WHERE state = ?", (RUNNING,)).fetchall():
                stale = force or (row["lease_until"] or 0) < now or _worker_dead(row["worker"])
                if not stale:
                    continue
                if row["recoveries"] == 0:
                    self._move(db, row["id"], RUNNING, QUEUED, worker=None, lease_until=None,
                               started_at=None, recoveries=1)
                    changed.append((row["id"], QUEUED))
                else:
                    self._move(db, row["id"], RUNNING, FAILED, finished_at=now, lease_until=None,
                               failure="worker died twice while running this job")
                    changed.append((row["id"], FAILED))
        return changed

    # ------------------------------------------------------------- proposals

    @staticmethod
    def _proposal(row: sqlite3.Row) -> ProposalRecord:
        return ProposalRecord(row["id"], row["job_id"], row["model"], row["task"], json.loads(row["dataset"]),
                              json.loads(row["metric_values"]), row["state"], bool(row["verified"]),
                              row["created_at"], row["report_blob"], row["artifact_blob"], row["source_note"],
                              row["decided_at"])

    def insert_proposal(self, *, job_id: str | None, model: str, task: str | None, dataset: dict[str, Any],
                        values: dict[str, Any], verified: bool, report_blob: str | None = None,
                        artifact_blob: str | None = None, source_note: str | None = None) -> ProposalRecord:
        """Create a proposal; idempotent per (job, model)."""
        with self.transaction() as db:
            if job_id is not None:
                row = db.execute("SELECT * FROM proposals WHERE job_id = ? AND model = ?", (job_id, model)).fetchone()
                if row is not None:
                    return self._proposal(row)
            pid = new_ulid()
            db.execute(
                "INSERT INTO proposals (id, job_id, model, task, dataset_name, dataset_sha256, dataset, "
                "metric_values, report_blob, artifact_blob, state, verified, source_note, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (pid, job_id, model, task, dataset["name"], dataset.get("sha256"), json.dumps(dataset, sort_keys=True),
                 json.dumps(values, sort_keys=True), report_blob, artifact_blob, PROPOSED, int(verified),
                 source_note, time.time()))
            return self._proposal(db.execute("SELECT * FROM proposals WHERE id = ?", (pid,)).fetchone())

    def get_proposal(self, proposal_id: str) -> ProposalRecord:
        db = self.connect()
        try:
            row = db.execute("SELECT * FROM proposals WHERE id = ?", (proposal_id,)).fetchone()
        finally:
            db.close()
        if row is None:
            raise NotFound(f"no proposal {proposal_id!r}")
        return self._proposal(row)

    def list_proposals(self, *, model: str | None = None, dataset: str | None = None,
                       states: tuple[str, ...] | None = None) -> list[ProposalRecord]:
        clauses, args = [], []
        if model is not None:
            clauses.append("model = ?")
            args.append(model)
        if dataset is not None:
            clauses.append("(dataset_name = ? OR dataset_sha256 = ?)")
            args += [dataset, dataset]
        if states:
            clauses.append(f"state IN ({', '.join('?' * len(states))})")
            args += list(states)
        where = f"WHERE {' AND '.join(clauses)}" if clauses else ""
        db = self.connect()
        try:
            rows = db.execute(f"SELECT * FROM proposals {where} ORDER BY id", args).fetchall()
        finally:
            db.close()
        return [self._proposal(r) for r in rows]

    def decide(self, proposal_id: str, new_state: str) -> ProposalRecord:
        if new_state not in (APPROVED, CLOSED):
            raise ValueError(f"bad decision state {new_state!r}")
        with self.transaction() as db:
            row = db.execute("SELECT * FROM proposals WHERE id = ?", (proposal_id,)).fetchone()
            if row is None:
                raise NotFound(f"no proposal {proposal_id!r}")
            if row["state"] != PROPOSED:
                raise AlreadyDecided(f"proposal {proposal_id} is already {row['state']}")
            db.execute("UPDATE proposals SET state = ?, decided_at = ? WHERE id = ? AND state = ?",
                       (new_state, time.time(), proposal_id, PROPOSED))
            return self._proposal(db.execute("SELECT * FROM proposals WHERE id = ?", (proposal_id,)).fetchone())

    def copy_in(self, src: str | os.PathLike) -> str:
        return self.blobs.put_file(src)
