import json
import math
import sys
import textwrap

import pytest
from hypothesis import given, settings, strategies as st

from evalkit.errors import (DatasetParseError, EmptyInput, MetricSchemaMismatch, ProviderCrash, ProviderError,
                            ProviderProtocolViolation, ResponseTimeout, UnknownTask)
from evalkit.evaluator import (EvaluationReport, FunctionProvider, SubprocessProvider, evaluate_task,
                               measure_perf, recompute_report)
from evalkit.evaluator.harness import read_artifact, recompute_from_artifact
from evalkit.evaluator.tasks import get_task, load_dataset, read_jsonl

from conftest import classification_rows, write_jsonl

PY = sys.executable


def oracle_cmd(dataset, *extra):
    return [PY, "-m", "evalkit.providers", "oracle", "--dataset", str(dataset), *extra]


def constant_cmd(value, *extra):
    return [PY, "-m", "evalkit.providers", "constant", "--value", str(value), *extra]


FAULTY = textwrap.dedent('''
    import json, sys, time
    mode = sys.argv[1]
    hello = json.loads(sys.stdin.readline())
    if mode == "badhello":
        print(json.dumps({"type": "hi"}), flush=True)
        sys.exit(0)
    print(json.dumps({"type": "hello", "protocol": "evalkit-provider/1", "model": "faulty"}), flush=True)
    pending = []
    for line in sys.stdin:
        req = json.loads(line)
        if mode == "hang":
            time.sleep(60)
        if mode == "garbage":
            print("this is not json", flush=True)
            continue
        if mode == "unknown":
            print(json.dumps({"id": "nope", "prediction": 1}), flush=True)
            continue
        if mode == "error":
            print(json.dumps({"id": req["id"], "error": "model exploded"}), flush=True)
            continue
        if mode == "noprediction":
            print(json.dumps({"id": req["id"]}), flush=True)
            continue
        if mode == "crash":
            sys.stderr.write("segfault in layer 7\\n")
            sys.exit(9)
        reply = {"id": req["id"], "prediction": int(req["id"][2:]) % 3 % 2}
        if mode == "duplicate":
            print(json.dumps(reply), flush=True)
            print(json.dumps(reply), flush=True)
            continue
        if mode == "reverse":
            pending.append(reply)
            if len(pending) == 2:
                for r in reversed(pending):
                    print(json.dumps(r), flush=True)
                pending = []
            continue
        print(json.dumps(reply), flush=True)
''')


@pytest.fixture
def faulty(tmp_path):
    path = tmp_path / "faulty.py"
    path.write_text(FAULTY)
    return lambda mode, **kw: SubprocessProvider([PY, str(path), mode], **kw)


def by_text_parity(inputs):
    # deterministic toy model: label is the parity of the number in the text
    return [int(x["text"].split()[-1]) % 2 for x in inputs]


# --- tasks -------------------------------------------------------------------

def test_unknown_task():
    with pytest.raises(UnknownTask):
        get_task("image-classification")


def test_dataset_columns_are_checked(tmp_path):
    path = write_jsonl(tmp_path / "bad.jsonl", [{"text": "a"}])
    with pytest.raises(DatasetParseError):
        load_dataset(path, get_task("text-classification"))
    (tmp_path / "broken.jsonl").write_text("{oops\n")
    with pytest.raises(DatasetParseError):
        load_dataset(tmp_path / "broken.jsonl", get_task("text-classification"))


def test_duplicate_ids_rejected(tmp_path):
    path = write_jsonl(tmp_path / "dup.jsonl", [{"id": "a", "text": "x", "label": 0}, {"id": "a", "text": "y", "label": 1}])
    with pytest.raises(DatasetParseError):
        load_dataset(path, get_task("text-classification"))


def test_label_names_are_mapped(tmp_path):
    rows = [{"text": "good", "label": "positive"}, {"text": "bad", "label": "negative"},
            {"text": "meh", "label": "negative"}]
    path = write_jsonl(tmp_path / "named.jsonl", rows)
    provider = FunctionProvider(lambda xs: ["positive" if x["text"] == "good" else "negative" for x in xs])
    report = evaluate_task("text-classification", path, provider)
    assert report.values()["accuracy"] == 1.0
    assert report.label_mapping == {"negative": 0, "positive": 1}
    # pipeline-style outputs pick the highest-scoring label
    piped = FunctionProvider(lambda xs: [[{"label": "negative", "score": 0.9}, {"label": "positive", "score": 0.1}]
                                         for _ in xs])
    assert evaluate_task("text-classification", path, piped).values()["accuracy"] == 2 / 3


# --- evaluate_task -----------------------------------------------------------

def test_oracle_provider_is_perfect(cls_dataset):
    report = evaluate_task("text-classification", cls_dataset, SubprocessProvider(oracle_cmd(cls_dataset)))
    assert report.values() == {"accuracy": 1.0}
    assert report.provider["model"] == "dummy-oracle"
    assert report.n_examples == 40


def test_constant_provider_half_right(tmp_path):
    rows = [{"text": str(i), "label": lab} for i, lab in enumerate([1, 1, 0, 0])]
    path = write_jsonl(tmp_path / "four.jsonl", rows)
    report = evaluate_task("text-classification", path, SubprocessProvider(constant_cmd(1), batch_size=3))
    assert report.values()["accuracy"] == 0.5


def test_batch_size_invariance(cls_dataset):
    reports = [evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity, batch_size=b),
                             ["accuracy", "precision_recall_f1"], ci=True, iterations=200, seed=3)
               for b in (1, 4, 16)]
    first = reports[0]
    for r in reports[1:]:
        assert r.values() == first.values()
        assert r.cis == first.cis
    assert [r.perf.batch_size for r in reports] == [1, 4, 16]


def test_subprocess_pipelined_matches_sequential(cls_dataset):
    seq = evaluate_task("text-classification", cls_dataset,
                        SubprocessProvider(constant_cmd(1), batch_size=4))
    piped = evaluate_task("text-classification", cls_dataset,
                          SubprocessProvider(constant_cmd(1), batch_size=4, max_in_flight=3))
    assert seq.values() == piped.values()


def test_out_of_order_responses_reassociated(cls_dataset, faulty):
    expected = evaluate_task("text-classification", cls_dataset, faulty("inorder", batch_size=2))
    got = evaluate_task("text-classification", cls_dataset, faulty("reverse", batch_size=2))
    assert got.values() == expected.values()
    a, _ = read_artifact(got.artifact_path)
    b, _ = read_artifact(expected.artifact_path)
    assert a == b


@pytest.mark.parametrize("mode,error", [
    ("duplicate", ProviderProtocolViolation),
    ("garbage", ProviderProtocolViolation),
    ("unknown", ProviderProtocolViolation),
    ("noprediction", ProviderProtocolViolation),
    ("badhello", ProviderProtocolViolation),
    ("error", ProviderError),
])
def test_protocol_faults(cls_dataset, faulty, mode, error):
    with pytest.raises(error):
        evaluate_task("text-classification", cls_dataset, faulty(mode, batch_size=4, timeout_s=10))


def test_crash_carries_stderr(cls_dataset, faulty):
    with pytest.raises(ProviderCrash) as info:
        evaluate_task("text-classification", cls_dataset, faulty("crash"))
    assert "segfault in layer 7" in info.value.stderr


def test_dummy_fail_after(cls_dataset):
    with pytest.raises(ProviderCrash, match="simulated failure"):
        evaluate_task("text-classification", cls_dataset,
                      SubprocessProvider(oracle_cmd(cls_dataset, "--fail-after", "5"), batch_size=2))


def test_hang_times_out(cls_dataset, faulty):
    with pytest.raises(ResponseTimeout):
        evaluate_task("text-classification", cls_dataset, faulty("hang", timeout_s=0.5))


def test_missing_command_is_crash(cls_dataset, tmp_path):
    with pytest.raises(ProviderCrash):
        evaluate_task("text-classification", cls_dataset, SubprocessProvider([str(tmp_path / "missing-binary")]))


def test_metric_schema_mismatch(cls_dataset):
    with pytest.raises(MetricSchemaMismatch):
        evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity), ["bleu"])
    with pytest.raises(MetricSchemaMismatch):
        evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity), ["label_distribution"])


def test_question_answering(qa_dataset):
    report = evaluate_task("question-answering-extractive", qa_dataset,
                           SubprocessProvider(oracle_cmd(qa_dataset)), ["exact_match", "bleu", "rouge_l"])
    values = report.values()
    assert values["exact_match"] == 1.0
    assert values["rougeL_f1"] == 1.0
    wrong = evaluate_task("question-answering-extractive", qa_dataset,
                          FunctionProvider(lambda xs: [{"answer": "ada"} for _ in xs]), ["exact_match"],
                          metric_params={"exact_match": {"normalize": "casefold+strip"}})
    assert wrong.values()["exact_match"] == 1 / 3


def test_token_classification_flattens(tmp_path):
    rows = [{"tokens": ["a", "b"], "tags": [0, 1]}, {"tokens": ["c"], "tags": [1]}]
    path = write_jsonl(tmp_path / "tok.jsonl", rows)
    report = evaluate_task("token-classification", path, FunctionProvider(lambda xs: [[0] * len(x["tokens"]) for x in xs]))
    assert report.values()["accuracy"] == 1 / 3


# --- artifacts and reports ---------------------------------------------------

def test_artifact_fidelity(cls_dataset, tmp_path):
    report = evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity),
                           ["accuracy", "f1", "precision"], artifact_path=tmp_path / "preds.jsonl")
    rows = read_jsonl(tmp_path / "preds.jsonl")
    assert len(rows) == report.n_examples
    assert set(rows[0]) == {"id", "input_hash", "prediction", "reference"}
    assert [r.to_dict() for r in recompute_report(report)] == [r.to_dict() for r in report.metrics]
    offline = recompute_from_artifact(tmp_path / "preds.jsonl", "text-classification", ["accuracy"])
    assert offline[0].values == report.metrics[0].values


def test_report_json_round_trip(cls_dataset):
    report = evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity),
                           ["accuracy", "precision_recall_f1"], ci=True, iterations=100)
    again = EvaluationReport.from_json(report.to_json())
    assert again == report
    for module_id, keys in report.cis.items():
        result = next(r for r in report.metrics if r.module_id == module_id)
        assert set(keys) <= set(result.values)


def test_ci_is_deterministic_and_bounded(cls_dataset):
    runs = [evaluate_task("text-classification", cls_dataset, FunctionProvider(by_text_parity), ci=True,
                          iterations=300, seed=11) for _ in range(2)]
    assert runs[0].cis == runs[1].cis
    ci = runs[0].cis["accuracy"]["accuracy"]
    assert 0.0 <= ci.low <= ci.high <= 1.0
    assert (ci.iterations, ci.seed) == (300, 11)


def test_string_labels_for_unknown_names(tmp_path):
    path = write_jsonl(tmp_path / "x.jsonl", classification_rows(6))
    report = evaluate_task("text-classification", path, FunctionProvider(lambda xs: ["mystery"] * len(xs)))
    assert report.values()["accuracy"] == 0.0


# --- perf --------------------------------------------------------------------

def test_perf_examples():
    one = measure_perf([(1, 0.010)])
    assert one.latency_ms["p50"] == one.latency_ms["p99"] == pytest.approx(10.0)
    assert one.throughput == pytest.approx(100.0)
    two = measure_perf([(1, 0.010), (1, 0.030)])
    assert two.latency_ms["mean"] == pytest.approx(20.0)
    assert two.latency_ms["max"] == pytest.approx(30.0)
    four = measure_perf([(4, 0.040)])
    assert four.latency_ms["p50"] == four.latency_ms["max"] == pytest.approx(10.0)
    assert four.n_examples == 4
    with pytest.raises(EmptyInput):
        measure_perf([])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(1, 16), st.floats(1e-6, 5.0)), min_size=1, max_size=30),
       st.one_of(st.none(), st.floats(1e-3, 100.0)))
def test_perf_invariants(timings, total):
    perf = measure_perf(timings, total)
    n = sum(s for s, _ in timings)
    assert perf.n_examples == n
    assert math.isclose(perf.throughput, n / perf.total_time_s, rel_tol=1e-9)
    lat = perf.latency_ms
    assert 0 <= lat["p50"] <= lat["p90"] <= lat["p99"] <= lat["max"]
    assert lat["mean"] <= lat["max"]


def test_report_perf_matches_run(cls_dataset):
    report = evaluate_task("text-classification", cls_dataset, SubprocessProvider(constant_cmd(0), batch_size=5))
    perf = report.perf
    assert perf.n_examples == 40 and perf.batch_size == 5
    assert math.isclose(perf.throughput, 40 / perf.total_time_s, rel_tol=1e-9)
    json.dumps(perf.to_dict())
