"""The evaluation-module abstraction: add / add_batch / compute, and combine."""

from __future__ import annotations

import copy
import math
import numbers
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .accumulator import ColumnarBuffer
from .errors import (DegenerateResult, EmptyInput, IncompatibleSchemas, InvalidParameter,
                     SchemaMismatch)
from .schema import FeatureSchema, ModuleKind

Scorer = Callable[[Mapping[str, list], Mapping[str, Any]], Mapping[str, Any]]

OUTPUT_KINDS = ("float", "int", "float-list", "float-map", "object")


@dataclass(frozen=True)
class OutputField:
    name: str
    kind: str = "float"
    higher_is_better: bool | None = None

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "OutputField":
        kind = d.get("kind", "float")
        if kind not in OUTPUT_KINDS:
            raise ValueError(f"output {d.get('name')!r} has unknown kind {kind!r}")
        return cls(d["name"], kind, d.get("higher_is_better"))

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.higher_is_better is not None:
            d["higher_is_better"] = self.higher_is_better
        return d


def _clean(value: Any, path: str) -> Any:
    """Convert numpy scalars/arrays to plain Python and reject non-finite numbers."""
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, Mapping):
        return {(k.item() if hasattr(k, "item") else k): _clean(v, f"{path}[{k!r}]") for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, bool):
        return value
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        value = float(value)
        if not math.isfinite(value):
            raise DegenerateResult(f"score {path} is not finite ({value})")
        return value
    raise DegenerateResult(f"score {path} has unsupported type {type(value).__name__}")


@dataclass
class ModuleResult:
    values: dict[str, Any]
    module_id: str
    module_version: str
    seed: int | None = None
    parameters_used: dict[str, Any] = field(default_factory=dict)
    source: str = "builtin"
    revision: str | None = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def keys(self):
        return self.values.keys()

    def to_dict(self) -> dict[str, Any]:
        return {
            "values": copy.deepcopy(self.values),
            "module_id": self.module_id,
            "module_version": self.module_version,
            "seed": self.seed,
            "parameters_used": copy.deepcopy(self.parameters_used),
            "source": self.source,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModuleResult":
        return cls(
            values=dict(d["values"]),
            module_id=d["module_id"],
            module_version=d["module_version"],
            seed=d.get("seed"),
            parameters_used=dict(d.get("parameters_used", {})),
            source=d.get("source", "builtin"),
            revision=d.get("revision"),
        )


class _Accumulating:
    """Shared add/add_batch/compute plumbing over a ColumnarBuffer."""

    features: FeatureSchema

    def _init_buffer(self, spill_threshold_bytes: int | None, spill_dir) -> None:
        self._spill_threshold = spill_threshold_bytes
        self._spill_dir = spill_dir
        self.buffer = ColumnarBuffer(self.features, spill_threshold_bytes, spill_dir)

    def add_batch(self, batch: Mapping[str, Sequence[Any]] | None = None, **columns: Sequence[Any]) -> None:
        """Append rows. No scoring happens until :meth:`compute`."""
        batch = dict(batch or {}, **columns)
        self.buffer.append(batch)

    def add(self, **row: Any) -> None:
        """Append a single row given as ``column=value`` keywords."""
        self.add_batch({k: [v] for k, v in row.items()})

    def _split_kwargs(self, kwargs: Mapping[str, Any]) -> tuple[dict, dict]:
        names = set(self.features.names)
        batch = {k: v for k, v in kwargs.items() if k in names}
        params = {k: v for k, v in kwargs.items() if k not in names}
        return batch, params

    def _take_rows(self, batch: Mapping[str, Any], snapshot: bool) -> dict[str, list]:
        if batch:
            self.buffer.append(batch)
        if self.buffer.row_count == 0:
            raise EmptyInput("nothing to compute: add rows with add/add_batch or pass them to compute()")
        columns = self.buffer.materialize()
        if not snapshot:
            self.buffer.clear()
        return columns

    def reset(self) -> None:
        self.buffer.clear()


class EvaluationModule(_Accumulating):
    """A named, versioned, kind-tagged computation over typed rows."""

    def __init__(
        self,
        id: str,
        version: str,
        kind: ModuleKind | str,
        features: FeatureSchema,
        output_schema: Sequence[OutputField],
        scorer: Scorer,
        parameters: Mapping[str, Any] | None = None,
        source: str = "builtin",
        revision: str | None = None,
        card_path: str | None = None,
        spill_threshold_bytes: int | None = None,
        spill_dir=None,
    ):
        self.id = id
        self.version = version
        self.kind = ModuleKind.parse(kind)
        features.check_kind(self.kind)
        self.features = features
        self.output_schema = tuple(output_schema)
        self._scorer = scorer
        self._defaults = dict(parameters or {})
        self.source = source
        self.revision = revision
        self.card_path = card_path
        self._init_buffer(spill_threshold_bytes, spill_dir)

    @property
    def parameters(self) -> dict[str, Any]:
        return copy.deepcopy(self._defaults)

    @property
    def output_names(self) -> list[str]:
        return [o.name for o in self.output_schema]

    def fresh(self) -> "EvaluationModule":
        """An identical module with an empty buffer."""
        return EvaluationModule(self.id, self.version, self.kind, self.features, self.output_schema,
                                self._scorer, self._defaults, self.source, self.revision,
                                self.card_path, self._spill_threshold, self._spill_dir)

    def resolve_parameters(self, overrides: Mapping[str, Any]) -> dict[str, Any]:
        unknown = sorted(set(overrides) - set(self._defaults))
        if unknown:
            raise InvalidParameter(f"module {self.id!r} has no parameter(s) {unknown}; "
                                   f"known: {sorted(self._defaults)}")
        resolved = copy.deepcopy(self._defaults)
        for k, v in overrides.items():
            default = self._defaults[k]
            if default is not None and v is not None and not _compatible(default, v):
                raise InvalidParameter(f"parameter {k!r} of module {self.id!r} expects "
                                       f"{type(default).__name__}, got {type(v).__name__}")
            resolved[k] = copy.deepcopy(v)
        return resolved

    def score(self, columns: Mapping[str, list], **overrides: Any) -> ModuleResult:
        """Run the scoring function on already-validated columns, bypassing the buffer."""
        params = self.resolve_parameters(overrides)
        raw = self._scorer(columns, params)
        keys, expected = set(raw), set(self.output_names)
        if keys != expected:
            raise DegenerateResult(f"module {self.id!r} produced keys {sorted(keys)}, "
                                   f"declared {sorted(expected)}")
        values = {o.name: _clean(raw[o.name], o.name) for o in self.output_schema}
        seed = params.get("seed")
        return ModuleResult(values=values, module_id=self.id, module_version=self.version,
                            seed=seed if isinstance(seed, int) else None,
                            parameters_used=params, source=self.source, revision=self.revision)

    def compute(self, batch: Mapping[str, Sequence[Any]] | None = None, *, snapshot: bool = False,
                **kwargs: Any) -> ModuleResult:
        """Score every accumulated row (plus an optional inline batch).

        Keyword arguments naming feature columns form the inline batch; any
        other keyword is a per-call parameter override. The buffer is emptied
        afterwards unless ``snapshot=True``.
        """
        inline, overrides = self._split_kwargs(kwargs)
        if batch:
            inline = dict(batch, **inline)
        params = self.resolve_parameters(overrides)  # fail before consuming the buffer
        columns = self._take_rows(inline, snapshot)
        return self.score(columns, **{k: params[k] for k in overrides})

    def __repr__(self) -> str:
        return f"EvaluationModule({self.id!r}, version={self.version!r}, kind={self.kind.value})"


def _compatible(default: Any, value: Any) -> bool:
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, numbers.Real) and isinstance(value, numbers.Real):
        return not (isinstance(default, numbers.Integral) and not isinstance(value, numbers.Integral))
    if isinstance(default, (list, tuple)) and isinstance(value, (list, tuple)):
        return True
    return isinstance(value, type(default))


class CombinedModule(_Accumulating):
    """Several modules behind the single-module API.

    Rows are accumulated once and every member scores the same rows. Result
    keys are the union of member keys; a key emitted by more than one member
    is prefixed with ``<module_id>_`` for each of them.
    """

    def __init__(self, members: Sequence[EvaluationModule], spill_threshold_bytes: int | None = None,
                 spill_dir=None):
        if not members:
            raise ValueError("combine needs at least one module")
        first = members[0]
        for m in members[1:]:
            if m.features != first.features:
                raise IncompatibleSchemas(
                    f"cannot combine {first.id!r} and {m.id!r}: feature schemas differ "
                    f"({first.features.to_json()} vs {m.features.to_json()})")
        ids = [m.id for m in members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate modules in combine: {ids}")
        self.members = list(members)
        self.features = first.features
        self.kind = first.kind
        self.id = "+".join(ids)
        self.version = "+".join(m.version for m in members)
        counts: dict[str, int] = {}
        for m in members:
            for name in m.output_names:
                counts[name] = counts.get(name, 0) + 1
        self._collisions = {k for k, c in counts.items() if c > 1}
        self.output_schema = tuple(
            OutputField(self._key(m, o.name), o.kind, o.higher_is_better)
            for m in members for o in m.output_schema)
        self._init_buffer(spill_threshold_bytes, spill_dir)

    @property
    def output_names(self) -> list[str]:
        return [o.name for o in self.output_schema]

    def _key(self, member: EvaluationModule, name: str) -> str:
        return f"{member.id}_{name}" if name in self._collisions else name

    def score(self, columns: Mapping[str, list], **overrides: Any) -> ModuleResult:
        values: dict[str, Any] = {}
        used: dict[str, Any] = {}
        seeds = []
        for m in self.members:
            mine = {k: v for k, v in overrides.items() if k in m.parameters}
            res = m.score(columns, **mine)
            for k, v in res.values.items():
                values[self._key(m, k)] = v
            used[m.id] = res.parameters_used
            if res.seed is not None:
                seeds.append(res.seed)
        return ModuleResult(values=values, module_id=self.id, module_version=self.version,
                            seed=seeds[0] if seeds else None, parameters_used=used, source="combined")

    def compute(self, batch: Mapping[str, Sequence[Any]] | None = None, *, snapshot: bool = False,
                **kwargs: Any) -> ModuleResult:
        inline, overrides = self._split_kwargs(kwargs)
        if batch:
            inline = dict(batch, **inline)
        known = set().union(*(m.parameters for m in self.members))
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise InvalidParameter(f"no combined member has parameter(s) {unknown}")
        columns = self._take_rows(inline, snapshot)
        return self.score(columns, **overrides)

    def __repr__(self) -> str:
        return f"CombinedModule({[m.id for m in self.members]})"


def combine(modules: Iterable[str | EvaluationModule], registry=None, **load_kwargs: Any) -> CombinedModule:
    """Bundle modules (ids or instances) so one compute returns all their scores."""
    from .registry import default_registry

    reg = registry or default_registry()
    members = [m if isinstance(m, EvaluationModule) else reg.load(m, **load_kwargs) for m in modules]
    if not members:
        raise ValueError("combine needs at least one module id")
    return CombinedModule(members)
