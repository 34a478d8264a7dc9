import json
import sys
import random

import pytest


@pytest.fixture(autouse=True)
def _isolated_env(tmp_path, monkeypatch):
    # keep registry roots, git caches and spill files out of the user's home
    monkeypatch.delenv("EVALKIT_REGISTRY_ROOTS", raising=False)
    monkeypatch.delenv("EVALKIT_SPILL_THRESHOLD", raising=False)
    monkeypatch.delenv("EVALKIT_KEEP_SPILL", raising=False)
    monkeypatch.setenv("EVALKIT_CACHE_DIR", str(tmp_path / "git-cache"))
    monkeypatch.setenv("EVALKIT_SPILL_DIR", str(tmp_path / "spill"))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def classification_rows(n=40, seed=3, labels=(0, 1)):
    rng = random.Random(seed)
    return [{"id": f"ex{i:03d}", "text": f"sample text {i}", "label": rng.choice(labels)} for i in range(n)]


@pytest.fixture
def cls_dataset(tmp_path):
    return write_jsonl(tmp_path / "sst.jsonl", classification_rows())


@pytest.fixture
def qa_dataset(tmp_path):
    rows = [
        {"id": "q1", "question": "Who wrote it?", "context": "It was written by Ada.", "answer": "Ada"},
        {"id": "q2", "question": "Where?", "context": "In the old town of Bern.", "answer": ["the old town", "Bern"]},
        {"id": "q3", "question": "When?", "context": "Back in 1999.", "answer": {"text": ["1999"]}},
    ]
    return write_jsonl(tmp_path / "qa.jsonl", rows)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
