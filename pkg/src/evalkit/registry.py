"""Module resolution, manifests, documentation cards, validation and scaffolding.

A module lives in a directory holding ``manifest.json`` (machine-read) and a
card (``README.md`` by default, human-read but machine-checked). The manifest
fields are:

``id``              ``[a-z0-9_-]+``, optionally ``<user>/<id>``
``version``         semantic version, e.g. ``1.0.0``
``kind``            ``metric`` | ``comparison`` | ``measurement``
``features``        list of ``{"name", "type"}``; types: int, float, string,
                    string-sequence, float-sequence
``output_schema``   list of ``{"name", "kind", "higher_is_better"?}``
``parameters``      mapping of parameter name to default value
``card_path``       card file, relative to the module directory
``implementation``  ``{"builtin": "<scorer name>"}`` or
                    ``{"command": ["{python}", "impl.py", ...]}``
``examples``        optional list of ``{"inputs", "parameters"?, "expected"}``

Roots are searched in order and the first match wins. Git roots are cloned
shallowly into ``$EVALKIT_CACHE_DIR/git/<url-hash>/<commit>/`` under a lock
file, and the resolved commit is recorded on every result.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import subprocess
import sys
import tempfile
import textwrap
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from filelock import FileLock

from .errors import (CardValidationFailure, EvalkitError, ExternalModuleFailure, InvalidManifest,
                     InvalidName, TargetExists, UnknownModule, VersionNotFound)
from .metrics import BUILTIN_SCORERS
from .module import EvaluationModule, OutputField
from .schema import FeatureSchema, ModuleKind

ID_RE = re.compile(r"^(?:[a-z0-9_\-]+/)?[a-z0-9_\-]+$")
NAME_RE = re.compile(r"^[a-z0-9_\-]+$")
SEMVER_RE = re.compile(
    r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)"
    r"(?:-((?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*)(?:\.(?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*))*))?"
    r"(?:\+([0-9a-zA-Z-]+(?:\.[0-9a-zA-Z-]+)*))?$")

CARD_SECTIONS = (
    "Description",
    "Intended Use",
    "Output Range",
    "Usage Examples",
    "Limitations and Biases",
    "Citation",
)

MANIFEST_NAME = "manifest.json"
CANONICAL_DIR = Path(__file__).parent / "canonical"
ENV_REGISTRY_ROOTS = "EVALKIT_REGISTRY_ROOTS"
ENV_CACHE_DIR = "EVALKIT_CACHE_DIR"

EXTERNAL_PROTOCOL = "evalkit-module/1"


def is_semver(version: str) -> bool:
    return bool(SEMVER_RE.match(version))


def semver_key(version: str) -> tuple:
    m = SEMVER_RE.match(version)
    if not m:
        return (-1,)
    major, minor, patch, pre = int(m[1]), int(m[2]), int(m[3]), m[4]
    # a release sorts after its pre-releases
    return (major, minor, patch, pre is None, pre or "")


# ---------------------------------------------------------------- cards

@dataclass
class ModuleCard:
    title: str
    sections: dict[str, str]

    @classmethod
    def parse(cls, text: str) -> "ModuleCard":
        title = ""
        sections: dict[str, str] = {}
        current: str | None = None
        lines: list[str] = []
        in_fence = False
        for line in text.splitlines():
            if line.lstrip().startswith("```"):
                in_fence = not in_fence
            if not in_fence and line.startswith("# ") and not title:
                title = line[2:].strip()
                continue
            if not in_fence and line.startswith("## "):
                if current is not None:
                    sections[current] = "\n".join(lines).strip()
                current = line[3:].strip()
                lines = []
                continue
            if current is not None:
                lines.append(line)
        if current is not None:
            sections[current] = "\n".join(lines).strip()
        return cls(title, sections)

    @classmethod
    def read(cls, path: Path) -> "ModuleCard":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def section(self, name: str) -> str | None:
        wanted = name.casefold()
        for k, v in self.sections.items():
            if k.casefold() == wanted:
                return v
        return None


# ------------------------------------------------------------ manifests

@dataclass
class ModuleManifest:
    id: str
    version: str
    kind: ModuleKind
    features: FeatureSchema
    output_schema: list[OutputField]
    parameters: dict[str, Any]
    card_path: str
    implementation: dict[str, Any]
    examples: list[dict[str, Any]] = field(default_factory=list)
    directory: Path | None = None

    @classmethod
    def from_json(cls, data: Mapping[str, Any], directory: Path | None = None) -> "ModuleManifest":
        problems = manifest_problems(data)
        if problems:
            raise InvalidManifest(f"invalid manifest{f' in {directory}' if directory else ''}: "
                                  + "; ".join(problems))
        return cls(
            id=data["id"],
            version=data["version"],
            kind=ModuleKind.parse(data["kind"]),
            features=FeatureSchema.from_json(data["features"]),
            output_schema=[OutputField.from_json(o) for o in data["output_schema"]],
            parameters=dict(data.get("parameters", {})),
            card_path=data.get("card_path", "README.md"),
            implementation=dict(data["implementation"]),
            examples=list(data.get("examples", [])),
            directory=directory,
        )

    @classmethod
    def read(cls, directory: Path) -> "ModuleManifest":
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidManifest(f"no {MANIFEST_NAME} in {directory}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidManifest(f"cannot read {path}: {exc}") from exc
        return cls.from_json(data, directory)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "version": self.version,
            "kind": self.kind.value,
            "features": self.features.to_json(),
            "output_schema": [o.to_json() for o in self.output_schema],
            "parameters": self.parameters,
            "card_path": self.card_path,
            "implementation": self.implementation,
            "examples": self.examples,
        }

    @property
    def card_file(self) -> Path:
        return (self.directory or Path(".")) / self.card_path


def manifest_problems(data: Any) -> list[str]:
    """Structural problems with a manifest document (empty when well-formed)."""
    if not isinstance(data, Mapping):
        return ["manifest must be a JSON object"]
    problems = []
    for key in ("id", "version", "kind", "features", "output_schema", "implementation"):
        if key not in data:
            problems.append(f"missing field {key!r}")
    if problems:
        return problems
    if not isinstance(data["id"], str) or not ID_RE.match(data["id"]):
        problems.append(f"id {data['id']!r} must match {ID_RE.pattern}")
    if not isinstance(data["version"], str) or not is_semver(data["version"]):
        problems.append(f"version {data['version']!r} is not a semantic version")
    kind = None
    try:
        kind = ModuleKind.parse(data["kind"])
    except ValueError as exc:
        problems.append(str(exc))
    try:
        features = FeatureSchema.from_json(data["features"])
        if kind is not None:
            features.check_kind(kind)
    except (KeyError, TypeError, ValueError, EvalkitError) as exc:
        problems.append(f"features: {exc}")
    try:
        outs = [OutputField.from_json(o) for o in data["output_schema"]]
        if not outs:
            problems.append("output_schema is empty")
        if len({o.name for o in outs}) != len(outs):
            problems.append("output_schema has duplicate names")
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"output_schema: {exc}")
    if not isinstance(data.get("parameters", {}), Mapping):
        problems.append("parameters must be an object")
    impl = data["implementation"]
    if not isinstance(impl, Mapping) or not (("builtin" in impl) ^ ("command" in impl)):
        problems.append("implementation must have exactly one of 'builtin' or 'command'")
    elif "builtin" in impl and impl["builtin"] not in BUILTIN_SCORERS:
        problems.append(f"unknown builtin implementation {impl['builtin']!r}")
    elif "command" in impl and (not isinstance(impl["command"], list) or not impl["command"]
                                or not all(isinstance(c, str) for c in impl["command"])):
        problems.append("implementation.command must be a non-empty list of strings")
    if not isinstance(data.get("examples", []), list):
        problems.append("examples must be a list")
    return problems


# ----------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warning"
    rule: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"severity": self.severity, "rule": self.rule, "message": self.message}


@dataclass
class ValidationReport:
    path: str
    module_id: str | None = None
    violations: list[Violation] = field(default_factory=list)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, severity: str, rule: str, message: str) -> None:
        self.violations.append(Violation(severity, rule, message))

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "module_id": self.module_id, "ok": self.ok,
                "violations": [v.to_dict() for v in self.violations]}


def validate(path: str | os.PathLike) -> ValidationReport:
    """Check a module directory. Problems are report entries, not exceptions.

    Raises OSError only when ``path`` itself is unreadable.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"module directory {directory} does not exist")
    report = ValidationReport(str(directory))
    manifest_file = directory / MANIFEST_NAME
    try:
        data = json.loads(manifest_file.read_text(encoding="utf-8"))
    except FileNotFoundError:
        report.add("error", "manifest.missing", f"no {MANIFEST_NAME} in {directory}")
        return report
    except json.JSONDecodeError as exc:
        report.add("error", "manifest.parse", f"{manifest_file}: {exc}")
        return report
    problems = manifest_problems(data)
    for p in problems:
        report.add("error", "manifest.field", p)
    if isinstance(data, Mapping):
        report.module_id = data.get("id")
    if problems:
        return report
    manifest = ModuleManifest.from_json(data, directory)

    card_file = manifest.card_file
    if not card_file.is_file():
        report.add("error", "card.missing", f"card {card_file} does not exist")
    else:
        card = ModuleCard.read(card_file)
        for name in CARD_SECTIONS:
            body = card.section(name)
            if body is None:
                report.add("error", "card.section", f"card is missing the '{name}' section")
            elif not body.strip():
                report.add("error", "card.section", f"card section '{name}' is empty")
        range_text = card.section("Output Range") or ""
        for out in manifest.output_schema:
            if out.name not in range_text:
                report.add("warning", "card.range",
                           f"output {out.name!r} is not described in the card's Output Range section")

    for i, ex in enumerate(manifest.examples):
        where = f"examples[{i}]"
        if not isinstance(ex, Mapping) or "inputs" not in ex:
            report.add("error", "example.shape", f"{where} needs an 'inputs' object")
            continue
        try:
            manifest.features.validate_batch(ex["inputs"])
        except EvalkitError as exc:
            report.add("error", "example.inputs", f"{where}: {exc}")
        unknown_params = set(ex.get("parameters", {})) - set(manifest.parameters)
        if unknown_params:
            report.add("error", "example.parameters", f"{where}: unknown parameters {sorted(unknown_params)}")
        unknown_keys = set(ex.get("expected", {})) - {o.name for o in manifest.output_schema}
        if unknown_keys:
            report.add("error", "example.expected", f"{where}: expected keys {sorted(unknown_keys)} "
                       f"are not in output_schema")
    return report


# ----------------------------------------------------- external modules

class CommandScorer:
    """Runs a community module's command under the line protocol.

    stdin receives a handshake line, then one ``{"row": {...}}`` line per row,
    then EOF. The command answers with one line: ``{"scores": {...}}`` or
    ``{"error": "..."}``. Commands run with the module directory as cwd and
    are trusted; there is no sandbox.
    """

    def __init__(self, command: Sequence[str], cwd: Path, module_id: str, timeout: float = 300.0):
        self.command = [sys.executable if c == "{python}" else c for c in command]
        self.cwd = cwd
        self.module_id = module_id
        self.timeout = timeout

    def __call__(self, columns: Mapping[str, list], params: Mapping[str, Any]) -> dict:
        names = list(columns)
        n = len(columns[names[0]]) if names else 0
        lines = [json.dumps({"protocol": EXTERNAL_PROTOCOL, "module": self.module_id,
                             "parameters": dict(params), "columns": names, "rows": n})]
        for i in range(n):
            lines.append(json.dumps({"row": {c: columns[c][i] for c in names}}))
        try:
            proc = subprocess.run(self.command, input="\n".join(lines) + "\n", capture_output=True,
                                  text=True, cwd=self.cwd, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalModuleFailure(f"module {self.module_id!r} command failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalModuleFailure(f"module {self.module_id!r} exited with status {proc.returncode}: "
                                        f"{proc.stderr.strip()}")
        out = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        try:
            reply = json.loads(out[-1])
        except (IndexError, json.JSONDecodeError) as exc:
            raise ExternalModuleFailure(f"module {self.module_id!r} produced no JSON result: "
                                        f"{proc.stdout[-500:]!r}") from exc
        if "error" in reply:
            raise ExternalModuleFailure(f"module {self.module_id!r} reported: {reply['error']}")
        return dict(reply.get("scores", {}))


# ---------------------------------------------------------------- roots

@dataclass(frozen=True)
class Resolved:
    manifest: ModuleManifest
    source: str
    revision: str | None = None


class BuiltinRoot:
    name = "builtin"

    def __init__(self, directory: Path = CANONICAL_DIR):
        self.directory = Path(directory)

    def ids(self) -> list[str]:
        return sorted(p.parent.name for p in self.directory.glob(f"*/{MANIFEST_NAME}"))

    def find(self, module_id: str, version: str | None = None, revision: str | None = None) -> Resolved | None:
        d = self.directory / module_id
        if "/" in module_id or not (d / MANIFEST_NAME).is_file():
            return None
        manifest = ModuleManifest.read(d)
        if version is not None and manifest.version != version:
            raise VersionNotFound(f"builtin module {module_id!r} has version {manifest.version}, not {version}")
        return Resolved(manifest, "builtin")

    def __repr__(self) -> str:
        return "builtin"


class DirectoryRoot:
    """``<root>/<id>/manifest.json`` or ``<root>/<id>/<version>/manifest.json``."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path).expanduser().resolve()

    def ids(self) -> list[str]:
        found = set()
        for m in self.path.rglob(MANIFEST_NAME):
            try:
                found.add(ModuleManifest.read(m.parent).id)
            except InvalidManifest:
                continue
        return sorted(found)

    def find(self, module_id: str, version: str | None = None, revision: str | None = None) -> Resolved | None:
        d = self.path / module_id
        if not d.is_dir():
            return None
        candidates: list[ModuleManifest] = []
        if (d / MANIFEST_NAME).is_file():
            candidates.append(ModuleManifest.read(d))
        for sub in sorted(d.iterdir()):
            if sub.is_dir() and (sub / MANIFEST_NAME).is_file() and is_semver(sub.name):
                candidates.append(ModuleManifest.read(sub))
        if not candidates:
            return None
        if version is not None:
            matching = [m for m in candidates if m.version == version]
            if not matching:
                raise VersionNotFound(f"module {module_id!r} in {self.path} has versions "
                                      f"{sorted(m.version for m in candidates)}, not {version}")
            chosen = matching[0]
        else:
            chosen = max(candidates, key=lambda m: semver_key(m.version))
        return Resolved(chosen, f"dir:{self.path}", _git_head(chosen.directory))

    def __repr__(self) -> str:
        return f"dir:{self.path}"


def _git(*args: str, cwd: Path | None = None) -> str:
    proc = subprocess.run(["git", *args], cwd=cwd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise subprocess.CalledProcessError(proc.returncode, ["git", *args], proc.stdout, proc.stderr)
    return proc.stdout.strip()


def _git_head(directory: Path | None) -> str | None:
    if directory is None or not (Path(directory) / ".git").exists():
        return None
    try:
        return _git("rev-parse", "HEAD", cwd=directory)
    except (OSError, subprocess.CalledProcessError):
        return None


def cache_dir() -> Path:
    base = os.environ.get(ENV_CACHE_DIR)
    return Path(base) if base else Path.home() / ".cache" / "evalkit"


class GitRoot:
    """A single-module git repository, optionally pinned to a revision."""

    _SHA_RE = re.compile(r"^[0-9a-f]{40}$")

    def __init__(self, url: str, revision: str | None = None, cache: str | os.PathLike | None = None):
        self.url = url
        self.revision = revision
        self.cache = Path(cache) if cache else cache_dir()

    def _key(self) -> Path:
        return self.cache / "git" / hashlib.sha256(self.url.encode("utf-8")).hexdigest()[:16]

    def checkout(self, revision: str | None = None) -> tuple[Path, str]:
        """Fetch ``revision`` (default: the pinned one, else default-branch head)."""
        rev = revision or self.revision
        base = self._key()
        base.mkdir(parents=True, exist_ok=True)
        with FileLock(str(base) + ".lock"):
            if rev and self._SHA_RE.match(rev) and (base / rev / MANIFEST_NAME).is_file():
                return base / rev, rev
            tmp = Path(tempfile.mkdtemp(prefix="fetch-", dir=base))
            try:
                self._fetch(rev, tmp)
                commit = _git("rev-parse", "HEAD", cwd=tmp)
                final = base / commit
                if final.exists():
                    shutil.rmtree(tmp)
                else:
                    tmp.rename(final)
                return final, commit
            except (OSError, subprocess.CalledProcessError) as exc:
                shutil.rmtree(tmp, ignore_errors=True)
                detail = getattr(exc, "stderr", "") or str(exc)
                raise UnknownModule(f"cannot fetch {self.url}@{rev or 'HEAD'}: {detail.strip()}") from exc

    def _fetch(self, rev: str | None, dest: Path) -> None:
        if rev is None:
            _git("clone", "-q", "--depth", "1", self.url, str(dest))
            return
        _git("init", "-q", str(dest))
        try:
            _git("fetch", "-q", "--depth", "1", self.url, rev, cwd=dest)
            _git("checkout", "-q", "FETCH_HEAD", cwd=dest)
        except subprocess.CalledProcessError:
            # servers that refuse shallow fetches of bare commit ids
            shutil.rmtree(dest)
            _git("clone", "-q", self.url, str(dest))
            _git("checkout", "-q", rev, cwd=dest)

    def find(self, module_id: str, version: str | None = None, revision: str | None = None) -> Resolved | None:
        directory, commit = self.checkout(revision)
        manifest = ModuleManifest.read(directory)
        if manifest.id != module_id and manifest.id.split("/")[-1] != module_id:
            return None
        if version is not None and manifest.version != version:
            raise VersionNotFound(f"{self.url}@{commit[:12]} provides {manifest.id} {manifest.version}, not {version}")
        return Resolved(manifest, f"git:{self.url}", commit)

    def ids(self) -> list[str]:
        try:
            directory, _ = self.checkout()
            return [ModuleManifest.read(directory).id]
        except EvalkitError:
            return []

    def __repr__(self) -> str:
        return f"git:{self.url}" + (f"@{self.revision}" if self.revision else "")


def parse_root(spec: str):
    """``builtin``, ``git+<url>[@<rev>]`` or a directory path."""
    if spec == "builtin":
        return BuiltinRoot()
    if spec.startswith("git+"):
        url = spec[4:]
        rev = None
        if "@" in url and not url.rsplit("@", 1)[1].count("/"):
            url, rev = url.rsplit("@", 1)
        return GitRoot(url, rev)
    return DirectoryRoot(spec)


# ------------------------------------------------------------- registry

def _looks_like_path(name: str) -> bool:
    return name.startswith((".", "/", "~")) or (Path(name).expanduser() / MANIFEST_NAME).is_file()


class Registry:
    """Ordered module roots; earlier roots shadow later ones. Immutable once built."""

    def __init__(self, roots: Iterable[Any] | None = None):
        self.roots = tuple(roots) if roots is not None else (BuiltinRoot(),)

    @classmethod
    def from_env(cls) -> "Registry":
        roots: list[Any] = [BuiltinRoot()]
        raw = os.environ.get(ENV_REGISTRY_ROOTS, "")
        for part in raw.split(os.pathsep):
            if part.strip() and part.strip() != "builtin":
                roots.append(parse_root(part.strip()))
        return cls(roots)

    def resolve(self, name: str, version: str | None = None, revision: str | None = None) -> Resolved:
        if _looks_like_path(name):
            directory = Path(name).expanduser().resolve()
            if not (directory / MANIFEST_NAME).is_file():
                raise UnknownModule(f"no {MANIFEST_NAME} at {directory}")
            manifest = ModuleManifest.read(directory)
            if version is not None and manifest.version != version:
                raise VersionNotFound(f"{directory} holds version {manifest.version}, not {version}")
            return Resolved(manifest, f"path:{directory}", _git_head(directory))
        if not ID_RE.match(name):
            raise UnknownModule(f"{name!r} is neither a module id nor a path")
        for root in self.roots:
            found = root.find(name, version, revision)
            if found is not None:
                return found
        raise UnknownModule(f"module {name!r} not found; searched roots: {[repr(r) for r in self.roots]}")

    def load(self, name: str, version: str | None = None, revision: str | None = None,
             **module_kwargs: Any) -> EvaluationModule:
        """Resolve ``name`` and return a module with an empty buffer."""
        resolved = self.resolve(name, version, revision)
        return build_module(resolved, **module_kwargs)

    def available(self) -> list[str]:
        seen: list[str] = []
        for root in self.roots:
            for mid in root.ids():
                if mid not in seen:
                    seen.append(mid)
        return seen


def build_module(resolved: Resolved, **module_kwargs: Any) -> EvaluationModule:
    manifest = resolved.manifest
    report = validate(manifest.directory) if manifest.directory else None
    if report is not None and not report.ok:
        card_errors = [v for v in report.errors if v.rule.startswith("card")]
        if card_errors:
            raise CardValidationFailure(f"module {manifest.id!r}: " + "; ".join(v.message for v in card_errors))
        raise InvalidManifest(f"module {manifest.id!r}: " + "; ".join(v.message for v in report.errors))
    impl = manifest.implementation
    if "builtin" in impl:
        scorer = BUILTIN_SCORERS[impl["builtin"]]
    else:
        scorer = CommandScorer(impl["command"], manifest.directory, manifest.id)
    return EvaluationModule(
        id=manifest.id,
        version=manifest.version,
        kind=manifest.kind,
        features=manifest.features,
        output_schema=manifest.output_schema,
        scorer=scorer,
        parameters=manifest.parameters,
        source=resolved.source,
        revision=resolved.revision,
        card_path=str(manifest.card_file),
        **module_kwargs,
    )


_DEFAULT: Registry | None = None
_DEFAULT_ENV: str | None = None


def default_registry() -> Registry:
    """Registry built from ``$EVALKIT_REGISTRY_ROOTS`` (rebuilt when it changes)."""
    global _DEFAULT, _DEFAULT_ENV
    env = os.environ.get(ENV_REGISTRY_ROOTS, "")
    if _DEFAULT is None or env != _DEFAULT_ENV:
        _DEFAULT, _DEFAULT_ENV = Registry.from_env(), env
    return _DEFAULT


def load(name: str, version: str | None = None, revision: str | None = None, **kwargs: Any) -> EvaluationModule:
    return default_registry().load(name, version, revision, **kwargs)


def canonical_ids() -> list[str]:
    return BuiltinRoot().ids()


def higher_is_better(score_name: str, registry: Registry | None = None) -> bool | None:
    """Direction of a score across canonical modules; None when no card declares one."""
    reg = registry or default_registry()
    directions = set()
    for root in reg.roots:
        if not isinstance(root, BuiltinRoot):
            continue
        for mid in root.ids():
            m = ModuleManifest.read(root.directory / mid)
            for o in m.output_schema:
                if o.name == score_name and o.higher_is_better is not None:
                    directions.add(o.higher_is_better)
    return directions.pop() if len(directions) == 1 else None


# ---------------------------------------------------------- scaffolding

_STUB_FEATURES = {
    ModuleKind.METRIC: [{"name": "predictions", "type": "int"}, {"name": "references", "type": "int"}],
    ModuleKind.COMPARISON: [{"name": "predictions_a", "type": "int"}, {"name": "predictions_b", "type": "int"},
                            {"name": "references", "type": "int"}],
    ModuleKind.MEASUREMENT: [{"name": "data", "type": "string"}],
}

_STUB_LOGIC = {
    ModuleKind.METRIC: ("fraction of rows where the prediction equals the reference",
                        'sum(r["predictions"] == r["references"] for r in rows) / len(rows)',
                        {"predictions": [1, 1], "references": [1, 0]}, 0.5),
    ModuleKind.COMPARISON: ("fraction of rows where both systems predict the same label",
                            'sum(r["predictions_a"] == r["predictions_b"] for r in rows) / len(rows)',
                            {"predictions_a": [1, 0], "predictions_b": [1, 1], "references": [1, 1]}, 0.5),
    ModuleKind.MEASUREMENT: ("number of rows in the dataset",
                             "float(len(rows))",
                             {"data": ["a", "b"]}, 2.0),
}


@dataclass
class ScaffoldReport:
    module_id: str
    directory: str
    files: list[str]
    commit: str | None

    def to_dict(self) -> dict[str, Any]:
        return {"module_id": self.module_id, "directory": self.directory, "files": self.files, "commit": self.commit}


def create_scaffold(name: str, kind: ModuleKind | str, target: str | os.PathLike,
                    git: bool = True) -> ScaffoldReport:
    """Write a ready-to-edit module (manifest, card, implementation, test) and commit it."""
    if not isinstance(name, str) or not NAME_RE.match(name):
        raise InvalidName(f"module name {name!r} must match {NAME_RE.pattern}")
    kind = ModuleKind.parse(kind)
    target = Path(target)
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise TargetExists(f"{target} exists and is not an empty directory")
    target.mkdir(parents=True, exist_ok=True)

    stem = name.replace("-", "_")
    what, expr, example_inputs, example_value = _STUB_LOGIC[kind]
    output = {"name": "score", "kind": "float"}
    if kind is ModuleKind.METRIC:
        output["higher_is_better"] = True
    manifest = {
        "id": name,
        "version": "0.1.0",
        "kind": kind.value,
        "features": _STUB_FEATURES[kind],
        "output_schema": [output],
        "parameters": {},
        "card_path": "README.md",
        "implementation": {"command": ["{python}", f"{stem}.py"]},
        "examples": [{"inputs": example_inputs, "expected": {"score": example_value}}],
    }
    files = {
        MANIFEST_NAME: json.dumps(manifest, indent=2) + "\n",
        "README.md": _card_template(name, kind, what, example_inputs),
        f"{stem}.py": _impl_template(name, what, expr),
        f"test_{stem}.py": _test_template(example_inputs, example_value),
    }
    for fname, content in files.items():
        (target / fname).write_text(content, encoding="utf-8")

    commit = None
    if git and shutil.which("git"):
        try:
            _git("init", "-q", cwd=target)
            _git("add", "-A", cwd=target)
            _git("-c", "user.name=evalkit", "-c", "user.email=evalkit@localhost",
                 "commit", "-q", "-m", f"Scaffold {kind.value} module {name}", cwd=target)
            commit = _git("rev-parse", "HEAD", cwd=target)
        except subprocess.CalledProcessError as exc:
            raise OSError(f"git failed while scaffolding {target}: {exc.stderr}") from exc
    return ScaffoldReport(name, str(target.resolve()), sorted(files), commit)


def _card_template(name: str, kind: ModuleKind, what: str, example_inputs: dict) -> str:
    args = ", ".join(f"{k}={v!r}" for k, v in example_inputs.items())
    return textwrap.dedent(f"""\
        # {name}

        ## Description
        A {kind.value} module. The stub implementation returns the {what};
        replace it with the real logic in the implementation file.

        ## Intended Use
        Describe the tasks, datasets and languages this {kind.value} is meant for.

        ## Output Range
        `score` is a float; document its range and which direction is better.

        ## Usage Examples
        ```python
        import evalkit
        module = evalkit.load("./{name}")
        module.compute({args})
        ```

        ## Limitations and Biases
        Describe known failure modes, languages or domains where results are unreliable,
        and resource requirements.

        ## Citation
        Add a reference for the method, or state that none applies.
        """)


def _impl_template(name: str, what: str, expr: str) -> str:
    return textwrap.dedent(f'''\
        """Implementation of the {name} module.

        Reads the evalkit module protocol on stdin (a handshake line, then one
        {{"row": {{...}}}} line per row) and writes one {{"scores": {{...}}}} line.
        """

        import json
        import sys


        def score(rows, parameters):
            # stub: {what}
            return {{"score": {expr}}}


        def main():
            lines = [json.loads(line) for line in sys.stdin if line.strip()]
            handshake, rows = lines[0], [entry["row"] for entry in lines[1:]]
            try:
                result = {{"scores": score(rows, handshake.get("parameters", {{}}))}}
            except Exception as exc:  # reported to the caller, not raised
                result = {{"error": f"{{type(exc).__name__}}: {{exc}}"}}
            sys.stdout.write(json.dumps(result) + "\\n")


        if __name__ == "__main__":
            main()
        ''')


def _test_template(example_inputs: dict, example_value: float) -> str:
    return textwrap.dedent(f'''\
        from pathlib import Path

        import evalkit


        def test_stub_scores_example():
            module = evalkit.load(str(Path(__file__).parent))
            result = module.compute(**{example_inputs!r})
            assert result["score"] == {example_value!r}
        ''')
