"""Latency and throughput summaries.

Per-example latency is the batch duration divided evenly over the batch; we
have no per-example instrumentation, so that is the only honest attribution.
Percentiles use the nearest-rank rule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Sequence

from ..errors import EmptyInput


@dataclass(frozen=True)
class PerfStats:
    total_time_s: float
    throughput: float
    latency_ms: dict[str, float]
    n_examples: int
    batch_size: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PerfStats":
        return cls(float(d["total_time_s"]), float(d["throughput"]),
                   {k: float(v) for k, v in d["latency_ms"].items()},
                   int(d["n_examples"]), int(d["batch_size"]))


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Smallest value with at least ``p`` percent of the data at or below it."""
    n = len(sorted_values)
    rank = max(1, math.ceil(p / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


def measure_perf(timings: Sequence[tuple[int, float]], total_time_s: float | None = None) -> PerfStats:
    """Summarise ``(batch_size, seconds)`` pairs.

    ``total_time_s`` is the wall time of the whole run; it defaults to the sum
    of batch durations (sequential issue).
    """
    if not timings:
        raise EmptyInput("measure_perf needs at least one timed batch")
    per_example: list[float] = []
    for size, seconds in timings:
        if size < 1 or seconds < 0:
            raise ValueError(f"bad timing ({size}, {seconds})")
        per_example.extend([seconds * 1000.0 / size] * size)
    per_example.sort()
    n = len(per_example)
    total = sum(s for _, s in timings) if total_time_s is None else float(total_time_s)
    if total <= 0:
        total = math.ulp(0.0)  # clocks can round a tiny run down to zero
    latency = {
        # exact mean lies in [min, max]; clamp away division rounding
        "mean": min(max(math.fsum(per_example) / n, per_example[0]), per_example[-1]),
        "p50": nearest_rank(per_example, 50),
        "p90": nearest_rank(per_example, 90),
        "p99": nearest_rank(per_example, 99),
        "max": per_example[-1],
    }
    return PerfStats(total_time_s=total, throughput=n / total, latency_ms=latency,
                     n_examples=n, batch_size=max(size for size, _ in timings))
