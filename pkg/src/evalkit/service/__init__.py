"""Local evaluation service: job queue, result proposals, leaderboards, HTTP API."""

from .api import make_server, serve
from .core import DEFAULT_PROVIDERS, LeaderboardEntry, Service, ranking_key
from .store import (APPROVED, CLOSED, FAILED, JOB_TRANSITIONS, PROPOSED, QUEUED, RUNNING, SUCCEEDED,
                    JobRecord, ProposalRecord, Store)
from .ulid import new_ulid

__all__ = [
    "make_server", "serve", "DEFAULT_PROVIDERS", "LeaderboardEntry", "Service", "ranking_key", "APPROVED",
    "CLOSED", "FAILED", "JOB_TRANSITIONS", "PROPOSED", "QUEUED", "RUNNING", "SUCCEEDED", "JobRecord",
    "ProposalRecord", "Store", "new_ulid",
]
