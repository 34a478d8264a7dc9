import json
import shutil
import subprocess
from pathlib import Path

import pytest

from evalkit import create_scaffold, load, validate
from evalkit.errors import (CardValidationFailure, ExternalModuleFailure, InvalidManifest, InvalidName,
                            TargetExists, UnknownModule, VersionNotFound)
from evalkit.registry import (BuiltinRoot, DirectoryRoot, GitRoot, Registry, canonical_ids, higher_is_better,
                              parse_root)

SECTIONS = ["Description", "Intended Use", "Output Range", "Usage Examples", "Limitations and Biases", "Citation"]


def git(*args, cwd):
    return subprocess.run(["git", *args], cwd=cwd, check=True, capture_output=True, text=True).stdout.strip()


@pytest.fixture
def scaffold(tmp_path):
    return create_scaffold("my_metric", "metric", tmp_path / "my_metric")


def copy_canonical(module_id, dest):
    shutil.copytree(BuiltinRoot().directory / module_id, dest)
    return dest


def test_load_canonical_accuracy():
    m = load("accuracy")
    assert m.kind.value == "metric"
    assert m.source == "builtin"
    assert m.buffer.row_count == 0


def test_unknown_module_lists_roots():
    with pytest.raises(UnknownModule, match="builtin"):
        load("nonexistent_xyz")


def test_version_pinning():
    assert load("accuracy", version=load("accuracy").version).id == "accuracy"
    with pytest.raises(VersionNotFound):
        load("accuracy", version="99.0.0")


@pytest.mark.parametrize("module_id", canonical_ids())
def test_every_canonical_card_is_clean(module_id):
    report = validate(BuiltinRoot().directory / module_id)
    assert report.violations == []


def test_canonical_set_is_complete():
    assert set(canonical_ids()) >= {
        "accuracy", "precision", "recall", "f1", "exact_match", "bleu", "rouge_l", "perplexity",
        "mcnemar", "paired_bootstrap", "label_distribution", "duplicates", "text_length"}


def test_missing_card_section_is_one_error(tmp_path):
    d = copy_canonical("accuracy", tmp_path / "acc")
    card = (d / "README.md").read_text()
    start = card.index("## Limitations and Biases")
    end = card.index("## Citation")
    (d / "README.md").write_text(card[:start] + card[end:])
    report = validate(d)
    assert len(report.errors) == 1
    assert report.errors[0].rule == "card.section"
    with pytest.raises(CardValidationFailure):
        load(str(d))


def test_output_missing_from_range_section_warns(tmp_path):
    d = copy_canonical("accuracy", tmp_path / "acc")
    manifest = json.loads((d / "manifest.json").read_text())
    manifest["output_schema"].append({"name": "balanced_accuracy", "kind": "float", "higher_is_better": True})
    (d / "manifest.json").write_text(json.dumps(manifest))
    report = validate(d)
    assert report.ok
    assert [v.rule for v in report.warnings] == ["card.range"]


@pytest.mark.parametrize("mutate,rule", [
    (lambda m: m.update(version="one"), "manifest.field"),
    (lambda m: m.update(id="Bad Id"), "manifest.field"),
    (lambda m: m.pop("kind"), "manifest.field"),
    (lambda m: m.update(implementation={"builtin": "nope"}), "manifest.field"),
    (lambda m: m.update(examples=[{"inputs": {"predictions": ["x"], "references": [1]}}]), "example.inputs"),
    (lambda m: m.update(examples=[{"inputs": {"predictions": [1], "references": [1]},
                                   "expected": {"bogus": 1}}]), "example.expected"),
])
def test_manifest_rules(tmp_path, mutate, rule):
    d = copy_canonical("accuracy", tmp_path / "acc")
    manifest = json.loads((d / "manifest.json").read_text())
    mutate(manifest)
    (d / "manifest.json").write_text(json.dumps(manifest))
    assert rule in {v.rule for v in validate(d).errors}


def test_broken_manifest_refuses_to_load(tmp_path):
    d = copy_canonical("accuracy", tmp_path / "acc")
    (d / "manifest.json").write_text("{not json")
    assert validate(d).errors[0].rule == "manifest.parse"
    with pytest.raises(InvalidManifest):
        load(str(d))


def test_validate_unreadable_path(tmp_path):
    with pytest.raises(OSError):
        validate(tmp_path / "missing")


def test_scaffold_round_trip(scaffold):
    assert len(scaffold.files) == 4
    assert scaffold.commit and len(scaffold.commit) == 40
    report = validate(scaffold.directory)
    assert report.violations == []
    card = (Path(scaffold.directory) / "README.md").read_text()
    for section in SECTIONS:
        assert f"## {section}" in card
    mod = load(scaffold.directory)
    res = mod.compute(predictions=[1, 1], references=[1, 0])
    assert res.values == {"score": 0.5}
    assert res.revision == scaffold.commit


@pytest.mark.parametrize("kind", ["comparison", "measurement"])
def test_scaffold_other_kinds(tmp_path, kind):
    rep = create_scaffold(f"stub_{kind}", kind, tmp_path / kind, git=False)
    assert rep.commit is None
    assert validate(rep.directory).violations == []
    manifest = json.loads((Path(rep.directory) / "manifest.json").read_text())
    example = manifest["examples"][0]
    assert load(rep.directory).compute(example["inputs"]).values == example["expected"]


def test_scaffold_preconditions(tmp_path):
    with pytest.raises(InvalidName):
        create_scaffold("My Metric!", "metric", tmp_path / "x")
    (tmp_path / "full").mkdir()
    (tmp_path / "full" / "f.txt").write_text("x")
    with pytest.raises(TargetExists):
        create_scaffold("ok_name", "metric", tmp_path / "full")


def test_external_module_failure_surfaces(scaffold):
    impl = Path(scaffold.directory) / "my_metric.py"
    impl.write_text("import sys\nsys.stderr.write('kaboom')\nsys.exit(4)\n")
    with pytest.raises(ExternalModuleFailure, match="kaboom"):
        load(scaffold.directory).compute(predictions=[1], references=[1])


def test_directory_root_shadows_builtin(tmp_path):
    root = tmp_path / "community"
    d = copy_canonical("accuracy", root / "accuracy")
    manifest = json.loads((d / "manifest.json").read_text())
    manifest["version"] = "9.9.9"
    (d / "manifest.json").write_text(json.dumps(manifest))
    shadowing = Registry([DirectoryRoot(root), BuiltinRoot()])
    assert {shadowing.load("accuracy").version for _ in range(3)} == {"9.9.9"}
    assert Registry([BuiltinRoot(), DirectoryRoot(root)]).load("accuracy").source == "builtin"


def test_directory_root_versions(tmp_path):
    root = tmp_path / "community"
    for v in ("1.0.0", "1.10.0", "1.2.0"):
        d = copy_canonical("accuracy", root / "acc_v" / v)
        manifest = json.loads((d / "manifest.json").read_text())
        manifest.update(id="acc_v", version=v)
        (d / "manifest.json").write_text(json.dumps(manifest))
    reg = Registry([DirectoryRoot(root)])
    assert reg.load("acc_v").version == "1.10.0"
    assert reg.load("acc_v", version="1.2.0").version == "1.2.0"
    with pytest.raises(VersionNotFound):
        reg.load("acc_v", version="2.0.0")
    assert reg.available() == ["acc_v"]


def test_env_roots_keep_builtin_first(tmp_path, monkeypatch):
    root = tmp_path / "community"
    copy_canonical("accuracy", root / "accuracy")
    create_scaffold("extra_metric", "metric", root / "extra_metric", git=False)
    monkeypatch.setenv("EVALKIT_REGISTRY_ROOTS", str(root))
    assert load("accuracy").source == "builtin"
    assert load("extra_metric").source == f"dir:{root.resolve()}"


def test_git_root_records_commits(scaffold, tmp_path):
    repo = scaffold.directory
    first = scaffold.commit
    manifest_path = Path(repo) / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["version"] = "0.2.0"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    git("-c", "user.name=t", "-c", "user.email=t@t", "commit", "-qam", "bump", cwd=repo)
    head = git("rev-parse", "HEAD", cwd=repo)

    unpinned = Registry([GitRoot(repo, cache=tmp_path / "cache")]).load("my_metric")
    assert unpinned.version == "0.2.0"
    res = unpinned.compute(predictions=[1, 0], references=[1, 0])
    assert res.revision == head
    assert res.source == f"git:{repo}"

    pinned = Registry([GitRoot(repo, revision=first, cache=tmp_path / "cache")]).load("my_metric")
    assert pinned.version == "0.1.0"
    assert pinned.revision == first


def test_git_root_unknown_revision(scaffold, tmp_path):
    root = GitRoot(scaffold.directory, revision="f" * 40, cache=tmp_path / "cache")
    with pytest.raises(UnknownModule):
        Registry([root]).load("my_metric")


def test_parse_root():
    assert isinstance(parse_root("builtin"), BuiltinRoot)
    g = parse_root("git+https://example.com/org/repo.git@abc123")
    assert (g.url, g.revision) == ("https://example.com/org/repo.git", "abc123")
    assert isinstance(parse_root("/tmp/somewhere"), DirectoryRoot)


def test_score_directions():
    assert higher_is_better("accuracy") is True
    assert higher_is_better("mean_perplexity") is False
    assert higher_is_better("no_such_score") is None
