"""Text-generation metrics: 13a tokenization, corpus BLEU, ROUGE-L, perplexity."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from ..errors import EmptyInput, EmptyReferenceSet, InvalidParameter, LengthMismatch, PositiveLogProb

# mteval-v13a rules, applied in order to " " + text + " "
_13A_RULES = (
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),  # ASCII punctuation/symbols except ' - . ,
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),  # period/comma not preceded by a digit
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),  # period/comma not followed by a digit
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),  # dash preceded by a digit
)


def tokenize_13a(text: str) -> list[str]:
    """Tokenize like mteval-v13a.

    Steps: drop ``<skipped>`` and hyphen-newline joins, turn newlines into
    spaces, unescape ``&quot; &amp; &lt; &gt;``, then pad with spaces

    * every ASCII character in ``{|}~ [\\]^_` space!"#$%& ()*+ :;<=>?@ /``,
    * ``.`` and ``,`` unless they sit between two digits,
    * ``-`` when it follows a digit,

    and split on whitespace. Apostrophes and other hyphens stay attached.

    >>> tokenize_13a("Hello, world!")
    ['Hello', ',', 'world', '!']
    >>> tokenize_13a("3.14")
    ['3.14']
    """
    norm = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in norm:
        norm = norm.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    norm = f" {norm} "
    for pattern, repl in _13A_RULES:
        norm = pattern.sub(repl, norm)
    return norm.split()


TOKENIZERS = {"13a": tokenize_13a, "none": str.split}


def get_tokenizer(name: str):
    try:
        return TOKENIZERS[name]
    except KeyError:
        raise InvalidParameter(f"unknown tokenizer {name!r}; expected one of {sorted(TOKENIZERS)}") from None


@dataclass(frozen=True)
class NGramProfile:
    order: int
    counts: Counter

    @classmethod
    def of(cls, tokens: Sequence[str], order: int) -> "NGramProfile":
        return cls(order, Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1)))


def _closest_ref_length(hyp_len: int, ref_lens: Sequence[int]) -> int:
    # ties go to the shorter reference
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


@dataclass(frozen=True)
class BleuStats:
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    hyp_len: int
    ref_len: int


def bleu_stats(hypotheses: Sequence[Sequence[str]], reference_sets: Sequence[Sequence[Sequence[str]]],
               max_order: int = 4) -> BleuStats:
    """Corpus-summed clipped n-gram matches, candidate n-gram totals and lengths."""
    if len(hypotheses) != len(reference_sets):
        raise LengthMismatch(f"{len(hypotheses)} predictions vs {len(reference_sets)} reference sets")
    if not hypotheses:
        raise EmptyInput("no predictions")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for i, (hyp, refs) in enumerate(zip(hypotheses, reference_sets)):
        if not refs:
            raise EmptyReferenceSet(f"prediction {i} has no references")
        hyp_len += len(hyp)
        ref_len += _closest_ref_length(len(hyp), [len(r) for r in refs])
        for n in range(1, max_order + 1):
            cand = NGramProfile.of(hyp, n).counts
            max_ref: Counter = Counter()
            for ref in refs:
                max_ref |= NGramProfile.of(ref, n).counts
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in cand.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return BleuStats(tuple(matches), tuple(totals), hyp_len, ref_len)


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len > ref_len:
        return 1.0
    if hyp_len == 0:
        return 0.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu(predictions: Sequence[str], references: Sequence[Sequence[str]], max_order: int = 4,
         smoothing: str = "none", tokenize: str = "13a") -> dict:
    """Corpus BLEU with uniform weights ``1/max_order``.

    ``smoothing="add-1-clip"`` adds one to both the clipped match count and the
    candidate total of every order >= 2. Without smoothing, any zero precision
    (including an order with no candidate n-grams) makes the score 0.
    Precisions and the score are fractions in [0, 1].
    """
    if max_order < 1:
        raise InvalidParameter("max_order must be >= 1")
    if smoothing not in ("none", "add-1-clip"):
        raise InvalidParameter(f"unknown smoothing {smoothing!r}; expected 'none' or 'add-1-clip'")
    tok = get_tokenizer(tokenize)
    hyps = [tok(p) for p in predictions]
    refs = [[tok(r) for r in rs] for rs in references]
    st = bleu_stats(hyps, refs, max_order)
    precisions = []
    for n, (m, t) in enumerate(zip(st.matches, st.totals), start=1):
        if smoothing == "add-1-clip" and n > 1:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)
    bp = brevity_penalty(st.hyp_len, st.ref_len)
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return {
        "bleu": score,
        "precisions": precisions,
        "brevity_penalty": bp,
        "length_ratio": st.hyp_len / st.ref_len if st.ref_len else 0.0,
    }


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b)) time, O(len(b)) space."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(prediction: Sequence[str], reference: Sequence[str]) -> tuple[Fraction, Fraction, Fraction]:
    """Exact LCS precision, recall and F1 for one pair (0 on empty denominators)."""
    lcs = lcs_length(prediction, reference)
    p = Fraction(lcs, len(prediction)) if prediction else Fraction(0)
    r = Fraction(lcs, len(reference)) if reference else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f


def rouge_l(predictions: Sequence[str], references: Sequence[str], tokenize: str = "13a") -> dict[str, float]:
    """Sentence-level LCS precision/recall/F1, averaged over pairs."""
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} references")
    if not predictions:
        raise EmptyInput("no predictions")
    tok = get_tokenizer(tokenize)
    scores = [rouge_l_pair(tok(p), tok(r)) for p, r in zip(predictions, references)]
    n = len(scores)
    return {
        "rougeL_precision": float(sum(s[0] for s in scores) / n),
        "rougeL_recall": float(sum(s[1] for s in scores) / n),
        "rougeL_f1": float(sum(s[2] for s in scores) / n),
    }


def perplexity_from_logprobs(logprobs: Sequence[Sequence[float]]) -> dict:
    """Per-example ``exp(-mean(logprobs))`` and their arithmetic mean."""
    if not logprobs:
        raise EmptyInput("no examples")
    ppls = []
    for i, seq in enumerate(logprobs):
        if len(seq) == 0:
            raise EmptyInput(f"example {i} has no token log-probabilities")
        if any(lp > 0 for lp in seq):
            raise PositiveLogProb(f"example {i} has a positive log-probability")
        # exact mean, rounded once: a constant sequence gives back exactly its value
        mean = float(sum(map(Fraction, seq)) / len(seq))
        ppls.append(math.exp(-mean))
    return {"mean_perplexity": math.fsum(ppls) / len(ppls), "perplexities": ppls}
