import subprocess
import sys

import pytest

from evalkit import load
from evalkit.errors import EmptyInput, LengthMismatch
from evalkit.metrics.comparisons import ContingencyPair, exact_binomial_p, mcnemar, paired_bootstrap

from _oracles import binomial_p_oracle


def vectors(n01, n10, n00=0, n11=0):
    """Prediction vectors realizing the given contingency cells (reference is always 1)."""
    a = [0] * n01 + [1] * n10 + [0] * n00 + [1] * n11
    b = [1] * n01 + [0] * n10 + [0] * n00 + [1] * n11
    return a, b, [1] * len(a)


def test_exhaustive_against_binomial_oracle():
    for m in range(21):
        for n01 in range(m + 1):
            assert abs(exact_binomial_p(n01, m - n01) - binomial_p_oracle(n01, m - n01)) <= 1e-12


def test_fixture_values():
    res = mcnemar(*vectors(8, 2, n00=3, n11=7))
    assert res["n01"] == 8 and res["n10"] == 2
    assert res["p_value"] == 0.109375
    assert res["statistic"] == 36 / 10


def test_symmetric_and_degenerate():
    assert mcnemar(*vectors(5, 5)) == {"statistic": 0.0, "p_value": 1.0, "n01": 5, "n10": 5}
    same = [1, 0, 1]
    assert mcnemar(same, same, [1, 1, 0])["p_value"] == 1.0


def test_cells_name_the_right_model():
    # A wrong and B right lands in n01
    table = ContingencyPair.from_predictions([0], [1], [1])
    assert (table.n00, table.n01, table.n10, table.n11) == (0, 1, 0, 0)


def test_mcnemar_errors():
    with pytest.raises(LengthMismatch):
        mcnemar([1], [1, 0], [1])
    with pytest.raises(EmptyInput):
        mcnemar([], [], [])


def test_paired_bootstrap_identical_systems():
    preds = [1, 0, 1, 1]
    res = paired_bootstrap(preds, preds, [1, 1, 0, 1], load("accuracy"), iterations=200)
    assert res["delta"] == 0.0
    assert res["p_value"] == 1.0
    assert res["ties"] == 200


def test_paired_bootstrap_dominant_system():
    refs = [1] * 50
    res = paired_bootstrap(refs, [0] * 50, refs, load("accuracy"), iterations=1000, seed=0)
    assert res["delta"] == 1.0
    assert res["p_value"] == 0.0
    assert res["wins_a"] == 1000


def test_paired_bootstrap_module_and_determinism():
    mod = load("paired_bootstrap")
    rows = {"predictions_a": [1, 0, 1, 1, 0, 1, 2, 2], "predictions_b": [1, 1, 0, 1, 0, 0, 2, 1],
            "references": [1, 0, 1, 0, 0, 1, 2, 1]}
    first = mod.compute(dict(rows), seed=42, iterations=300)
    second = load("paired_bootstrap").compute(dict(rows), seed=42, iterations=300)
    assert first.values == second.values
    assert first.seed == 42
    assert sum(first[k] for k in ("wins_a", "wins_b", "ties")) == 300


def test_paired_bootstrap_identical_across_processes():
    code = ("from evalkit import load;"
            "r = load('paired_bootstrap').compute(predictions_a=[1,0,1,1,0,1], predictions_b=[1,1,0,1,0,0],"
            " references=[1,0,1,0,0,1], seed=42, metric='f1');"
            "print(repr(r.values))")
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1
