"""Classification metrics. Ratios with a zero denominator are 0, never NaN.

Ratios are carried as exact fractions and rounded once at the end, so results
are the correctly rounded value of the exact score.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Sequence

from ..errors import EmptyInput, InvalidParameter, LengthMismatch, UnknownAveraging

AVERAGES = ("binary", "macro", "micro", "weighted")


def _check_pair(predictions: Sequence, references: Sequence) -> int:
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} references")
    if not predictions:
        raise EmptyInput("no predictions")
    return len(predictions)


def _div(num, den) -> Fraction:
    return Fraction(num) / Fraction(den) if den else Fraction(0)


def _f1(p: Fraction, r: Fraction) -> Fraction:
    return _div(2 * p * r, p + r)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def for_label(cls, predictions: Sequence[Hashable], references: Sequence[Hashable],
                  label: Hashable) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for p, r in zip(predictions, references):
            if p == label and r == label:
                tp += 1
            elif p == label:
                fp += 1
            elif r == label:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)

    @property
    def precision(self) -> Fraction:
        return _div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> Fraction:
        return _div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> Fraction:
        return _f1(self.precision, self.recall)


def accuracy(predictions: Sequence, references: Sequence) -> float:
    n = _check_pair(predictions, references)
    return sum(1 for p, r in zip(predictions, references) if p == r) / n


def precision_recall_f1(predictions: Sequence, references: Sequence, average: str = "binary",
                        pos_label: Hashable = 1) -> dict[str, float]:
    """Precision, recall and F1 under the requested averaging.

    ``binary`` scores ``pos_label`` one-vs-rest. ``macro`` averages per-class
    scores over every label seen in predictions or references, ``weighted``
    weights them by reference support, and ``micro`` pools the counts.
    """
    _check_pair(predictions, references)
    if average not in AVERAGES:
        raise UnknownAveraging(f"unknown averaging {average!r}; expected one of {list(AVERAGES)}")
    if average == "binary":
        c = ConfusionCounts.for_label(predictions, references, pos_label)
        return _as_float({"precision": c.precision, "recall": c.recall, "f1": c.f1})

    labels = sorted(set(predictions) | set(references), key=lambda x: (type(x).__name__, x))
    per = [ConfusionCounts.for_label(predictions, references, lab) for lab in labels]
    if average == "micro":
        tp = sum(c.tp for c in per)
        fp = sum(c.fp for c in per)
        fn = sum(c.fn for c in per)
        p, r = _div(tp, tp + fp), _div(tp, tp + fn)
        return _as_float({"precision": p, "recall": r, "f1": _f1(p, r)})
    if average == "macro":
        weights = [1] * len(per)
    else:
        support = Counter(references)
        weights = [support.get(lab, 0) for lab in labels]
    total = sum(weights)
    return _as_float({
        "precision": _div(sum(w * c.precision for w, c in zip(weights, per)), total),
        "recall": _div(sum(w * c.recall for w, c in zip(weights, per)), total),
        "f1": _div(sum(w * c.f1 for w, c in zip(weights, per)), total),
    })


def _as_float(scores: dict[str, Fraction]) -> dict[str, float]:
    return {k: float(v) for k, v in scores.items()}


def normalize_answer(text: str, mode: str) -> str:
    if mode == "none":
        return text
    if mode == "casefold+strip":
        return text.strip().casefold()
    raise InvalidParameter(f"unknown normalization {mode!r}; expected 'none' or 'casefold+strip'")


def exact_match(predictions: Sequence[str], references: Sequence[str], normalize: str = "none") -> float:
    n = _check_pair(predictions, references)
    hits = sum(1 for p, r in zip(predictions, references)
               if normalize_answer(p, normalize) == normalize_answer(r, normalize))
    return hits / n
