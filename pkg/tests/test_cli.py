import json
import subprocess
import sys

import pytest

from evalkit.cli import main
from evalkit.evaluator import EvaluationReport

from conftest import write_jsonl

ORACLE = "{python} -m evalkit.providers oracle --dataset %s"

# key sets of the --json outputs; changing them breaks downstream consumers
REPORT_KEYS = {"artifact_path", "cis", "dataset", "label_mapping", "metrics", "n_examples", "perf", "provider",
               "seed", "task", "timestamp"}
RESULT_KEYS = {"module_id", "module_version", "parameters_used", "revision", "seed", "source", "values"}
PERF_KEYS = {"batch_size", "latency_ms", "n_examples", "throughput", "total_time_s"}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def cli(*argv, cwd=None):
    return subprocess.run([sys.executable, "-m", "evalkit.cli", *argv], capture_output=True, text=True, cwd=cwd)


@pytest.fixture
def pairs(tmp_path):
    # 8 rows where only A is right, 2 where only B is right, 5 agreements
    rows = ([{"predictions_a": 1, "predictions_b": 0, "references": 1}] * 8
            + [{"predictions_a": 0, "predictions_b": 1, "references": 1}] * 2
            + [{"predictions_a": 1, "predictions_b": 1, "references": 1}] * 5)
    return write_jsonl(tmp_path / "pairs.jsonl", rows)


def test_run_with_oracle_provider(capsys, cls_dataset):
    code, out, err = run(capsys, "run", "--task", "text-classification", "--dataset", str(cls_dataset),
                         "--provider-cmd", ORACLE % cls_dataset, "--metrics", "accuracy")
    assert code == 0
    line = next(l for l in out.splitlines() if l.startswith("accuracy"))
    assert line.split()[-1] == "1.0"
    assert "\x1b" not in out


def test_run_json_round_trip(capsys, cls_dataset):
    code, out, _ = run(capsys, "run", "--task", "text-classification", "--dataset", str(cls_dataset),
                       "--provider-cmd", ORACLE % cls_dataset, "--metrics", "accuracy,f1", "--ci",
                       "--iterations", "100", "--json")
    assert code == 0
    data = json.loads(out)
    assert set(data) == REPORT_KEYS
    assert set(data["perf"]) == PERF_KEYS
    assert all(set(m) == RESULT_KEYS for m in data["metrics"])
    report = EvaluationReport.from_json(out)
    assert json.loads(report.to_json()) == data
    assert report.values()["accuracy"] == 1.0


def test_run_unknown_metric_is_user_error(capsys, cls_dataset):
    code, out, err = run(capsys, "run", "--task", "text-classification", "--dataset", str(cls_dataset),
                         "--provider-cmd", ORACLE % cls_dataset, "--metrics", "accuracy,sparkle")
    assert code == 1
    assert "sparkle" in err
    assert out == ""


def test_run_missing_dataset_is_user_error(capsys, tmp_path):
    code, _, err = run(capsys, "run", "--task", "text-classification", "--dataset", str(tmp_path / "nope.jsonl"),
                       "--provider-cmd", "{python} -m evalkit.providers constant --value 1")
    assert code == 1
    assert err


def test_run_provider_crash_is_internal_error(capsys, cls_dataset):
    code, _, err = run(capsys, "run", "--task", "text-classification", "--dataset", str(cls_dataset),
                       "--provider-cmd", (ORACLE % cls_dataset) + " --fail-after 2", "--batch-size", "1")
    assert code == 2
    assert "simulated failure" in err


def test_bad_flags_are_user_errors(capsys):
    assert run(capsys, "compare")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1


def test_compare_mcnemar_fixture(capsys, pairs):
    code, out, _ = run(capsys, "compare", "--dataset", str(pairs), "--json")
    assert code == 0
    data = json.loads(out)
    assert set(data) == {"test", "result", "convention"}
    assert data["result"]["values"]["p_value"] == pytest.approx(0.109375, abs=1e-12)
    code, out, _ = run(capsys, "compare", "--dataset", str(pairs))
    assert "convention:" in out


def test_compare_identical_columns(capsys, tmp_path):
    rows = [{"predictions_a": i % 2, "predictions_b": i % 2, "references": i % 3 % 2} for i in range(12)]
    path = write_jsonl(tmp_path / "same.jsonl", rows)
    out = json.loads(run(capsys, "compare", "--dataset", str(path), "--json")[1])
    assert out["result"]["values"]["p_value"] == 1.0


def test_compare_missing_column(capsys, tmp_path):
    path = write_jsonl(tmp_path / "bad.jsonl", [{"predictions_a": 1, "references": 1}])
    code, _, err = run(capsys, "compare", "--dataset", str(path))
    assert code == 1
    assert "predictions_b" in err


def test_compare_bootstrap_is_byte_identical(pairs):
    argv = ("compare", "--dataset", str(pairs), "--test", "bootstrap", "--seed", "11", "--iterations", "300")
    first, second = cli(*argv), cli(*argv)
    assert first.returncode == 0
    assert first.stdout == second.stdout
    assert "p_value" in first.stdout


def test_measure(capsys, tmp_path):
    labels = write_jsonl(tmp_path / "m.jsonl", [{"data": v} for v in (1, 1, 1, 0)])
    code, out, _ = run(capsys, "measure", "--dataset", str(labels), "--measurements", "label_distribution", "--json")
    assert code == 0
    assert json.loads(out)[0]["values"]["proportions"] == {"1": 0.75, "0": 0.25}


def test_measure_blocks_follow_request_order(capsys, tmp_path):
    path = write_jsonl(tmp_path / "t.jsonl", [{"data": s} for s in ("a b", "a b", "c")])
    blocks = json.loads(run(capsys, "measure", "--dataset", str(path), "--measurements",
                            "text_length,duplicates", "--json")[1])
    assert [b["module_id"] for b in blocks] == ["text_length", "duplicates"]
    code, out, _ = run(capsys, "measure", "--dataset", str(path), "--measurements", "duplicates,text_length")
    assert code == 0
    assert out.index("[duplicates]") < out.index("[text_length]")


def test_measure_unique_file_has_no_duplicates(capsys, tmp_path):
    path = write_jsonl(tmp_path / "u.jsonl", [{"data": f"row {i}"} for i in range(10)])
    out = json.loads(run(capsys, "measure", "--dataset", str(path), "--measurements", "duplicates", "--json")[1])
    assert out[0]["values"]["duplicate_fraction"] == 0.0


def test_measure_unknown_measurement(capsys, tmp_path):
    path = write_jsonl(tmp_path / "u.jsonl", [{"data": "x"}])
    assert run(capsys, "measure", "--dataset", str(path), "--measurements", "nope")[0] == 1
    assert run(capsys, "measure", "--dataset", str(path), "--measurements", "accuracy")[0] == 1


def test_create_then_validate(capsys, tmp_path):
    target = tmp_path / "mine"
    code, out, _ = run(capsys, "create", "My awesome metric", "--dir", str(target), "--json")
    assert code == 0
    assert json.loads(out)["module_id"] == "my_awesome_metric"
    code, out, _ = run(capsys, "validate", str(target), "--strict", "--json")
    assert code == 0
    assert json.loads(out)[0]["violations"] == []


def test_validate_reports_violations(capsys, tmp_path):
    target = tmp_path / "mine"
    run(capsys, "create", "broken", "--dir", str(target), "--no-git")
    card = target / "README.md"
    card.write_text(card.read_text().replace("## Limitations", "## Other"))
    code, out, _ = run(capsys, "validate", str(target))
    assert code == 3
    assert "error" in out


def test_validate_canonical(capsys):
    code, out, _ = run(capsys, "validate", "--canonical", "--json")
    assert code == 0
    assert len(json.loads(out)) >= 10


def test_validate_needs_paths(capsys):
    assert run(capsys, "validate")[0] == 1


def test_jobs_and_leaderboard(capsys, tmp_path, cls_dataset):
    store = str(tmp_path / "svc")
    owners = tmp_path / "owners.json"
    owners.write_text(json.dumps({"dummy-": "tok"}))
    spec = tmp_path / "job.json"
    spec.write_text(json.dumps({"task": "text-classification", "dataset": {"path": str(cls_dataset), "name": "toy"},
                                "providers": [{"name": "dummy-oracle", "model": "dummy-oracle"}],
                                "metrics": ["accuracy"]}))
    flags = ("--store", store, "--owners", str(owners), "--json")
    code, out, _ = run(capsys, "jobs", "submit", str(spec), *flags)
    assert code == 0
    job_id = json.loads(out)["id"]
    assert json.loads(run(capsys, "jobs", "work", *flags)[1]) == {"processed": 1}
    job = json.loads(run(capsys, "jobs", "show", job_id, *flags)[1])
    assert job["state"] == "succeeded"
    pid = job["proposal_ids"][0]
    assert run(capsys, "jobs", "review", pid, "approve", "--token", "bad", *flags)[0] == 1
    assert json.loads(run(capsys, "jobs", "review", pid, "approve", "--token", "tok", *flags)[1])["state"] == "approved"
    run(capsys, "jobs", "import", "--model", "acme/x", "--dataset", "toy", "--metric", "accuracy", "--value", "0.7",
        *flags)
    board = json.loads(run(capsys, "leaderboard", "--dataset", "toy", "--metric", "accuracy", *flags)[1])
    assert [(e["rank"], e["model"], e["verified"]) for e in board] == [(1, "dummy-oracle", True), (2, "acme/x", False)]
    code, out, _ = run(capsys, "leaderboard", "--dataset", "toy", "--metric", "accuracy", "--store", store)
    assert "self-reported" in out
    card = json.loads(run(capsys, "jobs", "card", "dummy-oracle", *flags)[1])
    assert card["results"][0]["proposal_id"] == pid


def test_figures_written_alongside_output(capsys, tmp_path, cls_dataset):
    figs = tmp_path / "figs"
    code, out, err = run(capsys, "run", "--task", "text-classification", "--dataset", str(cls_dataset),
                         "--provider-cmd", ORACLE % cls_dataset, "--metrics", "accuracy", "--ci",
                         "--iterations", "50", "--figures", str(figs))
    assert code == 0
    pngs = sorted(figs.glob("*.png"))
    assert len(pngs) == 2
    assert all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)
    assert "wrote" in err and "wrote" not in out


def test_console_script_version():
    result = cli("--version")
    assert result.returncode == 0
    assert result.stdout.startswith("evalkit ")
