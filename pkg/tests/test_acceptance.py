"""Acceptance criteria, one test each, timed against their runtime limits.

Every criterion prints a ``PASS``/``FAIL`` line; the lines are repeated in the
terminal summary (see conftest.py) so they survive output capture.
"""

import functools
import itertools
import json
import math
import random
import subprocess
import sys
import time

import numpy as np
import pytest

from evalkit import combine, create_scaffold, load, validate
from evalkit.accumulator import ColumnarBuffer
from evalkit.errors import ChecksumMismatch, EvalkitError
from evalkit.evaluator import FunctionProvider, evaluate_task, recompute_report
from evalkit.metrics.classification import accuracy, precision_recall_f1
from evalkit.metrics.comparisons import exact_binomial_p
from evalkit.metrics.text import bleu, rouge_l
from evalkit.registry import BuiltinRoot, canonical_ids
from evalkit.schema import FeatureSchema
from evalkit.service import APPROVED, CLOSED, PROPOSED, SUCCEEDED, Service
from evalkit.stats import bootstrap_ci

from _data import FAST_PARAMS, random_rows, split_batches
from _oracles import accuracy_oracle, binomial_p_oracle, prf_oracle
from conftest import classification_rows, write_jsonl

RESULTS: list[str] = []


def criterion(number, title, limit_s=None):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            status, detail = "PASS", ""
            try:
                fn(*args, **kwargs)
                elapsed = time.perf_counter() - start
                if limit_s is not None and elapsed >= limit_s:
                    status, detail = "FAIL", f" (took {elapsed:.1f}s, limit {limit_s}s)"
                    raise AssertionError(f"criterion {number} exceeded its {limit_s}s limit: {elapsed:.1f}s")
            except BaseException as exc:
                status = "FAIL"
                detail = detail or f" ({type(exc).__name__}: {str(exc).splitlines()[0][:120] if str(exc) else ''})"
                raise
            finally:
                elapsed = time.perf_counter() - start
                line = f"{status} criterion {number}: {title} [{elapsed:.2f}s]{detail}"
                RESULTS.append(line)
                print(line)
        return run
    return wrap


@criterion(1, "classification metrics and McNemar match brute-force oracles", limit_s=10)
def test_criterion_1_metric_oracles():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(1, 8)
        k = rng.randint(1, 3)
        labels = list(range(k))
        preds = [rng.choice(labels) for _ in range(n)]
        refs = [rng.choice(labels) for _ in range(n)]
        assert accuracy(preds, refs) == accuracy_oracle(preds, refs)
        for average in ("macro", "micro", "weighted"):
            assert precision_recall_f1(preds, refs, average=average) == prf_oracle(preds, refs, average)
        if set(preds) | set(refs) <= {0, 1}:
            assert precision_recall_f1(preds, refs, average="binary") == prf_oracle(preds, refs, "binary")
    for m in range(21):
        for n01 in range(m + 1):
            assert abs(exact_binomial_p(n01, m - n01) - binomial_p_oracle(n01, m - n01)) <= 1e-12


@criterion(2, "BLEU and ROUGE-L fixtures")
def test_criterion_2_text_fixtures():
    sents = ["the quick brown fox jumps", "over the lazy dog again today"]
    assert bleu(sents, [[s] for s in sents])["bleu"] == 1.0
    clipped = bleu(["the the the the the the the"], [["the cat is on the mat", "there is a cat on the mat"]])
    assert clipped["precisions"][0] == 2 / 7
    # hypothesis of 3 tokens against a 6-token reference: BP = exp(1 - 6/3)
    short = bleu(["the cat sat"], [["the cat sat on the mat"]], max_order=3)
    assert abs(short["brevity_penalty"] - math.exp(-1)) <= 1e-12
    assert rouge_l(["the cat"], ["the cat sat"])["rougeL_f1"] == 0.8


@criterion(3, "code listings: sequential add_batch equals one-shot; combine returns all keys")
def test_criterion_3_listings():
    metric = load("accuracy")
    metric.add_batch(predictions=[1, 1], references=[1, 0])
    sequential = metric.compute()
    one_shot = load("accuracy").compute(predictions=[1, 1], references=[1, 0])
    assert sequential.values == one_shot.values == {"accuracy": 0.5}
    both = combine(["accuracy", "f1"]).compute(predictions=[0, 1, 1], references=[0, 1, 0])
    assert {"accuracy", "f1"} <= set(both.values)


def _outcome(module, batches, params):
    try:
        for batch in batches:
            module.add_batch(batch)
        return "ok", json.dumps(module.compute(**params).values, sort_keys=True)
    except EvalkitError as exc:
        return "error", exc.code


@criterion(4, "spilled and in-memory buffers give bit-identical results; corruption detected", limit_s=30)
def test_criterion_4_accumulator_equivalence(tmp_path):
    checked = 0
    for module_id in canonical_ids():
        probe = load(module_id)
        params = FAST_PARAMS.get(module_id, {})
        rng = random.Random(f"acceptance-{module_id}")
        spilled_any = False
        for _ in range(100):
            cols = random_rows(rng, probe.features, rng.randint(1, 200))
            batches = list(split_batches(rng, cols))
            tiny = load(module_id, spill_threshold_bytes=1024, spill_dir=tmp_path)
            huge = load(module_id, spill_threshold_bytes=1 << 40, spill_dir=tmp_path)
            spilled_before = tiny.buffer
            a = _outcome(tiny, batches, params)
            b = _outcome(huge, batches, params)
            spilled_any = spilled_any or spilled_before.stats.spills > 0
            assert a == b, module_id
            checked += 1
        assert spilled_any, f"{module_id}: no dataset exercised the spill path"
    assert checked == 100 * len(canonical_ids())

    schema = FeatureSchema.of({"predictions": "int", "references": "int"})
    buf = ColumnarBuffer(schema, 1024, tmp_path)
    buf.append({"predictions": list(range(300)), "references": list(range(300))})
    path = buf.segments[0].path
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        buf.materialize()


CI_SCRIPT = ("import json, numpy as np; from evalkit.stats import bootstrap_ci;"
             "c = (np.arange(100) % 10 < 7).astype(float);"
             "print(json.dumps(bootstrap_ci(lambda i: c[i].mean(), 100, iterations=1000, seed=20231).to_dict()))")


@criterion(5, "bootstrap CIs reproducible across processes; 95% coverage within [0.90, 0.985]", limit_s=60)
def test_criterion_5_bootstrap():
    runs = [subprocess.run([sys.executable, "-c", CI_SCRIPT], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert runs[0] == runs[1]

    rng = np.random.default_rng(7)
    covered = 0
    for sim in range(500):
        correct = (rng.random(100) < 0.7).astype(float)
        ci = bootstrap_ci(lambda idx: correct[idx].mean(axis=1), 100, level=0.95, iterations=1000,
                          seed=sim, batched=True)
        covered += ci.low <= 0.7 <= ci.high
    coverage = covered / 500
    print(f"empirical coverage {coverage:.3f}")
    assert 0.90 <= coverage <= 0.985


def by_text_parity(inputs):
    return [int(x["text"].split()[-1]) % 2 for x in inputs]


@criterion(6, "evaluator batch invariance, artifact fidelity, perf invariants")
def test_criterion_6_evaluator(tmp_path):
    path = write_jsonl(tmp_path / "d.jsonl", classification_rows(40))
    reports = [evaluate_task("text-classification", path, FunctionProvider(by_text_parity, batch_size=b),
                             ["accuracy", "precision_recall_f1"], artifact_path=tmp_path / f"p{b}.jsonl")
               for b in (1, 4, 16)]
    for r in reports:
        assert r.values() == reports[0].values()
        assert [m.to_dict() for m in recompute_report(r)] == [m.to_dict() for m in r.metrics]
        perf = r.perf
        assert perf.throughput == perf.n_examples / perf.total_time_s
        lat = perf.latency_ms
        assert lat["p50"] <= lat["p90"] <= lat["p99"] <= lat["max"]


@criterion(7, "service end to end: submit, run, review, leaderboard, rerun, closed visibility", limit_s=60)
def test_criterion_7_service(tmp_path):
    dataset = write_jsonl(tmp_path / "d.jsonl", classification_rows(30))
    svc = Service(tmp_path / "svc", owners={"dummy-": "tok", "acme/": "acme"})
    spec = {"task": "text-classification", "dataset": {"path": str(dataset), "name": "toy"},
            "providers": [{"name": "dummy-oracle", "model": "dummy-oracle"},
                          {"name": "dummy-constant", "model": "dummy-constant-0", "args": {"value": "0"}}],
            "metrics": ["accuracy", "f1"]}
    job = svc.submit_job(spec)
    assert svc.run_worker() == 1
    job = svc.get_job(job.id)
    assert job.state == SUCCEEDED
    props = {svc.get_proposal(p).model: svc.get_proposal(p) for p in job.proposal_ids}
    assert {p.state for p in props.values()} == {PROPOSED}
    oracle, constant = props["dummy-oracle"], props["dummy-constant-0"]
    assert svc.review_proposal(oracle.id, "approve", "tok").state == APPROVED
    svc.import_self_reported("acme/claimed", "toy", "accuracy", 0.9)

    board = svc.get_leaderboard("toy", "accuracy")
    assert [(e.rank, e.model, e.verified) for e in board] == [
        (1, "dummy-oracle", True), (2, "acme/claimed", False), (3, "dummy-constant-0", True)]
    assert board[0].value == 1.0 and board[0].value > board[1].value > board[2].value

    rerun = svc.submit_job(spec, rerun=True)
    svc.run_worker()
    again = {svc.get_proposal(p).model: svc.get_proposal(p) for p in svc.get_job(rerun.id).proposal_ids}
    assert again["dummy-oracle"].values == oracle.values
    assert again["dummy-constant-0"].values == constant.values
    assert again["dummy-oracle"].dataset["sha256"] == oracle.dataset["sha256"]

    svc.review_proposal(constant.id, "close", "tok")
    assert svc.get_proposal(constant.id).state == CLOSED
    assert svc.get_proposal(constant.id).values == constant.values
    shown = svc.get_leaderboard("toy", "accuracy", include_closed=True)
    assert constant.id in [e.proposal_id for e in shown]


@criterion(8, "scaffold round trip and canonical cards")
def test_criterion_8_scaffold(tmp_path):
    made = create_scaffold("my_awesome_metric", "metric", tmp_path / "my_awesome_metric")
    assert validate(made.directory).violations == []
    module = load(made.directory)
    assert module.compute(predictions=[1, 1], references=[1, 0]).values == {"score": 0.5}
    for module_id in canonical_ids():
        report = validate(BuiltinRoot().directory / module_id)
        assert report.violations == [], (module_id, report.violations)
