"""Seeded resampling and percentile bootstrap confidence intervals.

Resample indices come from a pinned counter-based generator rather than the
platform RNG so that a given ``(seed, iteration)`` yields the same indices on
every machine. All arithmetic is modulo 2**64::

    GAMMA = 0x9E3779B97F4A7C15
    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    key(seed, b)      = mix64(seed + (b + 1) * GAMMA)
    word(seed, b, i)  = mix64(key(seed, b) + (i + 1) * GAMMA)
    index(seed, b, i) = min(n - 1, floor(((word >> 11) * 2**-53) * n))   # IEEE-754 double

``(word >> 11) * 2**-53`` is exact in double precision; the product with ``n``
is a single correctly rounded multiply, so the mapping is portable.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateMetric, IterationOutOfRange

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

DEFAULT_ITERATIONS = 1000
DEFAULT_LEVEL = 0.95

# rows of indices generated per vectorized block
_BLOCK_ELEMS = 1 << 20


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _keys(seed: int, iterations: np.ndarray) -> np.ndarray:
    b1 = iterations.astype(np.uint64) + np.uint64(1)
    return _mix64(np.uint64(seed & _MASK) + b1 * np.uint64(GAMMA))


def _indices_for(keys: np.ndarray, n: int) -> np.ndarray:
    counters = (np.arange(n, dtype=np.uint64) + np.uint64(1)) * np.uint64(GAMMA)
    words = _mix64(keys[:, None] + counters[None, :])
    u = (words >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    idx = np.floor(u * n).astype(np.int64)
    return np.minimum(idx, n - 1)


@dataclass(frozen=True)
class ResamplePlan:
    n: int
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    method: str = "percentile"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("resample plan needs n >= 1")
        if self.iterations < 1:
            raise ValueError("resample plan needs at least one iteration")
        if not 0 <= self.seed <= _MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.method != "percentile":
            raise ValueError(f"unsupported bootstrap method {self.method!r}")

    def indices(self, b: int) -> np.ndarray:
        return resample_indices(self, b)

    def blocks(self):
        """Yield ``(first_iteration, index_matrix)`` blocks in iteration order."""
        per_block = max(1, _BLOCK_ELEMS // self.n)
        with np.errstate(over="ignore"):
            for start in range(0, self.iterations, per_block):
                its = np.arange(start, min(start + per_block, self.iterations), dtype=np.uint64)
                yield start, _indices_for(_keys(self.seed, its), self.n)


def resample_indices(plan: ResamplePlan, b: int) -> np.ndarray:
    """Indices (length ``plan.n``) of bootstrap iteration ``b``."""
    if not 0 <= b < plan.iterations:
        raise IterationOutOfRange(f"iteration {b} outside [0, {plan.iterations})")
    with np.errstate(over="ignore"):
        return _indices_for(_keys(plan.seed, np.array([b], dtype=np.uint64)), plan.n)[0]


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    low: float
    high: float
    level: float = DEFAULT_LEVEL
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    method: str = "percentile"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfidenceInterval":
        return cls(**d)

    def __contains__(self, value: float) -> bool:
        return self.low <= value <= self.high


def interpolated_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics at position ``q * (B - 1)``."""
    m = len(sorted_values)
    pos = q * (m - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, m - 1)
    frac = pos - lo
    a, b = float(sorted_values[lo]), float(sorted_values[hi])
    if frac == 0.0 or a == b:
        return a
    return a + (b - a) * frac


def bootstrap_ci(
    statistic: Callable[[np.ndarray], float],
    n: int,
    level: float = DEFAULT_LEVEL,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    batched: bool = False,
) -> ConfidenceInterval:
    """Percentile bootstrap interval for ``statistic``.

    ``statistic`` receives an int64 index array selecting rows of the original
    data; ``statistic(np.arange(n))`` is the point estimate. With
    ``batched=True`` it instead receives a 2-D ``(k, n)`` index matrix and must
    return ``k`` values; results are identical to the per-iteration path.
    The interval need not contain the point estimate.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    plan = ResamplePlan(n=n, iterations=iterations, seed=seed)
    if batched:
        point = float(np.asarray(statistic(np.arange(n, dtype=np.int64)[None, :]))[0])
    else:
        point = float(statistic(np.arange(n, dtype=np.int64)))
    if not math.isfinite(point):
        raise DegenerateMetric("statistic is not finite on the original data", iteration=None)

    stats = np.empty(iterations, dtype=np.float64)
    for start, block in plan.blocks():
        if batched:
            values = np.asarray(statistic(block), dtype=np.float64)
            stats[start:start + len(block)] = values
        else:
            for j, idx in enumerate(block):
                stats[start + j] = float(statistic(idx))
    bad = np.flatnonzero(~np.isfinite(stats))
    if bad.size:
        b = int(bad[0])
        raise DegenerateMetric(f"statistic is not finite on bootstrap iteration {b}", iteration=b)

    stats.sort()
    alpha = (1.0 - level) / 2.0
    low = interpolated_quantile(stats, alpha)
    high = interpolated_quantile(stats, 1.0 - alpha)
    return ConfidenceInterval(point=point, low=low, high=high, level=level,
                              iterations=iterations, seed=seed)
