import math

import pytest

from evalkit import load
from evalkit.errors import EmptyInput, InvalidParameter
from evalkit.metrics.measurements import duplicates_fraction, label_distribution, text_length_stats


def test_label_distribution_examples():
    res = label_distribution([0, 1, 0, 1])
    assert res["proportions"] == {"0": 0.5, "1": 0.5}
    assert res["entropy_nats"] == pytest.approx(math.log(2), rel=1e-15)
    assert res["imbalance_ratio"] == 1.0
    res = label_distribution([1, 1, 1, 0])
    assert res["proportions"] == {"1": 0.75, "0": 0.25}
    assert res["imbalance_ratio"] == 3.0
    assert label_distribution([7, 7, 7])["entropy_nats"] == 0.0


def test_duplicates_examples():
    assert duplicates_fraction(["a", "b", "c"]) == {"duplicate_fraction": 0.0, "n_unique": 3}
    assert duplicates_fraction(["a", "a", "b"]) == {"duplicate_fraction": 1 / 3, "n_unique": 2}
    assert duplicates_fraction(["z"] * 4)["duplicate_fraction"] == 0.75


def test_text_length_examples():
    res = text_length_stats(["ab", "ab"])
    assert (res["mean"], res["std"], res["min"], res["max"]) == (2.0, 0.0, 2.0, 2.0)
    res = text_length_stats(["a", "abc"])
    assert (res["mean"], res["std"], res["min"], res["max"]) == (2.0, 1.0, 1.0, 3.0)
    assert text_length_stats(["a b"], unit="tokens")["mean"] == 2.0


def test_histogram_has_ten_bins_covering_every_row():
    data = ["x" * k for k in range(1, 40, 3)]
    hist = text_length_stats(data)["histogram"]
    assert len(hist["counts"]) == 10 and len(hist["edges"]) == 11
    assert sum(hist["counts"]) == len(data)


def test_measurement_errors():
    for fn in (label_distribution, duplicates_fraction, text_length_stats):
        with pytest.raises(EmptyInput):
            fn([])
    with pytest.raises(InvalidParameter):
        text_length_stats(["a"], unit="words")


def test_measurement_modules_take_data_only():
    res = load("duplicates").compute(data=["a", "a", "b", "c"])
    assert res["n_unique"] == 3
    assert load("text_length").compute(data=["a b c"], unit="tokens")["max"] == 3.0
