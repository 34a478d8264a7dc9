"""Paired model comparisons: exact McNemar test and paired bootstrap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

from ..errors import EmptyInput, InvalidParameter, LengthMismatch
from ..stats import ResamplePlan


@dataclass(frozen=True)
class ContingencyPair:
    """Joint correctness counts; first digit is model A, second model B (1 = correct)."""

    n00: int
    n01: int
    n10: int
    n11: int

    @property
    def n(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11

    @property
    def discordant(self) -> int:
        return self.n01 + self.n10

    @classmethod
    def from_predictions(cls, predictions_a: Sequence, predictions_b: Sequence,
                         references: Sequence) -> "ContingencyPair":
        if not (len(predictions_a) == len(predictions_b) == len(references)):
            raise LengthMismatch(f"lengths differ: {len(predictions_a)}, {len(predictions_b)}, {len(references)}")
        if not references:
            raise EmptyInput("no examples")
        counts = [0, 0, 0, 0]
        for a, b, r in zip(predictions_a, predictions_b, references):
            counts[2 * (a == r) + (b == r)] += 1
        return cls(*counts)


def exact_binomial_p(n01: int, n10: int) -> float:
    """Two-sided exact sign test on the discordant pairs, ``p = 1`` when there are none."""
    m = n01 + n10
    if m == 0:
        return 1.0
    k = min(n01, n10)
    tail = sum(math.comb(m, i) for i in range(k + 1))
    return float(min(Fraction(1), Fraction(2 * tail, 2**m)))


def mcnemar(predictions_a: Sequence, predictions_b: Sequence, references: Sequence) -> dict[str, Any]:
    table = ContingencyPair.from_predictions(predictions_a, predictions_b, references)
    m = table.discordant
    statistic = (table.n01 - table.n10) ** 2 / m if m else 0.0
    return {
        "statistic": float(statistic),
        "p_value": exact_binomial_p(table.n01, table.n10),
        "n01": table.n01,
        "n10": table.n10,
    }


def paired_bootstrap(predictions_a: Sequence, predictions_b: Sequence, references: Sequence,
                     metric, score_key: str = "", iterations: int = 1000, seed: int = 0) -> dict[str, Any]:
    """Paired bootstrap comparison of two systems under ``metric``.

    ``metric`` is an :class:`~evalkit.module.EvaluationModule` of kind metric.
    Each iteration resamples example indices once and scores both systems on
    the same indices. ``p_value`` counts resamples whose delta is zero or has
    the opposite sign to the full-data delta, doubled and capped at 1; it is 1
    when the full-data delta is 0.
    """
    n = len(references)
    if not (len(predictions_a) == len(predictions_b) == n):
        raise LengthMismatch(f"lengths differ: {len(predictions_a)}, {len(predictions_b)}, {n}")
    if n == 0:
        raise EmptyInput("no examples")
    if iterations < 1:
        raise InvalidParameter("iterations must be >= 1")
    key = score_key or next((o.name for o in metric.output_schema if o.kind == "float"), None)
    if key is None or key not in metric.output_names:
        raise InvalidParameter(f"metric {metric.id!r} has no scalar score {score_key!r}")

    def score(preds: list, refs: list) -> float:
        return float(metric.score({"predictions": preds, "references": refs})[key])

    refs = list(references)
    delta = score(list(predictions_a), refs) - score(list(predictions_b), refs)
    wins_a = wins_b = ties = opposed = 0
    plan = ResamplePlan(n=n, iterations=iterations, seed=seed)
    for _, block in plan.blocks():
        for idx in block.tolist():
            r = [refs[i] for i in idx]
            d = score([predictions_a[i] for i in idx], r) - score([predictions_b[i] for i in idx], r)
            if d > 0:
                wins_a += 1
            elif d < 0:
                wins_b += 1
            else:
                ties += 1
            if delta != 0 and d * delta <= 0:
                opposed += 1
    p = 1.0 if delta == 0 else min(1.0, 2.0 * opposed / iterations)
    return {"delta": delta, "p_value": p, "wins_a": wins_a, "wins_b": wins_b, "ties": ties}
