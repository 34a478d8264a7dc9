"""Dataset measurements (no references involved)."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

import numpy as np

from ..errors import EmptyInput, InvalidParameter
from .text import tokenize_13a


def _nonempty(data: Sequence) -> None:
    if len(data) == 0:
        raise EmptyInput("no rows")


def label_distribution(data: Sequence[Hashable]) -> dict:
    """Label proportions, Shannon entropy (nats) and max/min count ratio.

    Proportion keys are the labels rendered with ``str`` so results stay
    JSON-stable; the imbalance ratio only considers labels that occur.
    """
    _nonempty(data)
    counts = Counter(data)
    n = len(data)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    proportions = {str(label): c / n for label, c in ordered}
    entropy = -math.fsum((c / n) * math.log(c / n) for c in counts.values())
    return {
        "proportions": proportions,
        "entropy_nats": entropy + 0.0,  # avoid -0.0
        "imbalance_ratio": max(counts.values()) / min(counts.values()),
    }


def duplicates_fraction(data: Sequence[str]) -> dict:
    _nonempty(data)
    unique = len(set(data))
    return {"duplicate_fraction": (len(data) - unique) / len(data), "n_unique": unique}


def text_length_stats(data: Sequence[str], unit: str = "chars", bins: int = 10) -> dict:
    """Population statistics of per-row lengths plus an equal-width histogram.

    ``unit="tokens"`` counts 13a tokens. When every length is equal the
    histogram spans ``[length - 0.5, length + 0.5]``.
    """
    _nonempty(data)
    if unit == "chars":
        lengths = np.array([len(s) for s in data], dtype=np.float64)
    elif unit == "tokens":
        lengths = np.array([len(tokenize_13a(s)) for s in data], dtype=np.float64)
    else:
        raise InvalidParameter(f"unknown unit {unit!r}; expected 'chars' or 'tokens'")
    counts, edges = np.histogram(lengths, bins=bins)
    return {
        "mean": float(lengths.mean()),
        "std": float(lengths.std()),
        "min": float(lengths.min()),
        "max": float(lengths.max()),
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }
