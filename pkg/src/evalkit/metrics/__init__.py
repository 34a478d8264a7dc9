"""Canonical scoring functions and the table binding them to module manifests.

Each entry of :data:`BUILTIN_SCORERS` adapts a plain function to the scorer
signature ``(columns, parameters) -> scores`` used by
:class:`~evalkit.module.EvaluationModule`.
"""

from __future__ import annotations

from typing import Any, Callable, Mapping

from .classification import accuracy, exact_match, precision_recall_f1
from .comparisons import mcnemar, paired_bootstrap
from .measurements import duplicates_fraction, label_distribution, text_length_stats
from .text import bleu, perplexity_from_logprobs, rouge_l, tokenize_13a

Columns = Mapping[str, list]
Params = Mapping[str, Any]


def _accuracy(cols: Columns, params: Params) -> dict:
    return {"accuracy": accuracy(cols["predictions"], cols["references"])}


def _prf(keys: tuple[str, ...]) -> Callable[[Columns, Params], dict]:
    def scorer(cols: Columns, params: Params) -> dict:
        scores = precision_recall_f1(cols["predictions"], cols["references"],
                                     average=params["average"], pos_label=params["pos_label"])
        return {k: scores[k] for k in keys}
    return scorer


def _exact_match(cols: Columns, params: Params) -> dict:
    return {"exact_match": exact_match(cols["predictions"], cols["references"], params["normalize"])}


def _bleu(cols: Columns, params: Params) -> dict:
    return bleu(cols["predictions"], cols["references"], max_order=params["max_order"],
                smoothing=params["smoothing"], tokenize=params["tokenize"])


def _rouge_l(cols: Columns, params: Params) -> dict:
    return rouge_l(cols["predictions"], cols["references"], tokenize=params["tokenize"])


def _perplexity(cols: Columns, params: Params) -> dict:
    return perplexity_from_logprobs(cols["data"])


def _mcnemar(cols: Columns, params: Params) -> dict:
    return mcnemar(cols["predictions_a"], cols["predictions_b"], cols["references"])


def _paired_bootstrap(cols: Columns, params: Params) -> dict:
    from ..registry import default_registry

    metric = default_registry().load(params["metric"])
    if metric.kind.value != "metric":
        from ..errors import InvalidParameter
        raise InvalidParameter(f"paired bootstrap needs a metric module, {metric.id!r} is a {metric.kind.value}")
    return paired_bootstrap(cols["predictions_a"], cols["predictions_b"], cols["references"], metric,
                            score_key=params["score_key"], iterations=params["iterations"], seed=params["seed"])


def _label_distribution(cols: Columns, params: Params) -> dict:
    return label_distribution(cols["data"])


def _duplicates(cols: Columns, params: Params) -> dict:
    return duplicates_fraction(cols["data"])


def _text_length(cols: Columns, params: Params) -> dict:
    return text_length_stats(cols["data"], unit=params["unit"])


BUILTIN_SCORERS: dict[str, Callable[[Columns, Params], dict]] = {
    "accuracy": _accuracy,
    "precision": _prf(("precision",)),
    "recall": _prf(("recall",)),
    "f1": _prf(("f1",)),
    "precision_recall_f1": _prf(("precision", "recall", "f1")),
    "exact_match": _exact_match,
    "bleu": _bleu,
    "rouge_l": _rouge_l,
    "perplexity": _perplexity,
    "mcnemar": _mcnemar,
    "paired_bootstrap": _paired_bootstrap,
    "label_distribution": _label_distribution,
    "duplicates": _duplicates,
    "text_length": _text_length,
}

__all__ = [
    "BUILTIN_SCORERS", "accuracy", "bleu", "duplicates_fraction", "exact_match", "label_distribution",
    "mcnemar", "paired_bootstrap", "perplexity_from_logprobs", "precision_recall_f1", "rouge_l",
    "text_length_stats", "tokenize_13a",
]
