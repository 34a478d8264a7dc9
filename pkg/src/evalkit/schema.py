"""Module kinds and typed feature schemas."""

from __future__ import annotations

import enum
import hashlib
import numbers
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .errors import IncompatibleSchemas, RaggedBatch, SchemaMismatch


class ModuleKind(str, enum.Enum):
    METRIC = "metric"
    COMPARISON = "comparison"
    MEASUREMENT = "measurement"

    @classmethod
    def parse(cls, value: "str | ModuleKind") -> "ModuleKind":
        if isinstance(value, ModuleKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown module kind {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


REQUIRED_COLUMNS: dict[ModuleKind, tuple[str, ...]] = {
    ModuleKind.METRIC: ("predictions", "references"),
    ModuleKind.COMPARISON: ("predictions_a", "predictions_b", "references"),
    ModuleKind.MEASUREMENT: ("data",),
}

COLUMN_TYPES = ("int", "float", "string", "string-sequence", "float-sequence")

INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


def _is_int(v: Any) -> bool:
    return isinstance(v, numbers.Integral) and not isinstance(v, bool) and INT64_MIN <= v <= INT64_MAX


def _is_float(v: Any) -> bool:
    # ints widen to float; bools and strings do not
    return isinstance(v, (numbers.Real)) and not isinstance(v, bool)


def _is_seq(v: Any) -> bool:
    return isinstance(v, Sequence) and not isinstance(v, (str, bytes))


def value_matches(col_type: str, v: Any) -> bool:
    if col_type == "int":
        return _is_int(v)
    if col_type == "float":
        return _is_float(v)
    if col_type == "string":
        return isinstance(v, str)
    if col_type == "string-sequence":
        return _is_seq(v) and all(isinstance(x, str) for x in v)
    if col_type == "float-sequence":
        return _is_seq(v) and all(_is_float(x) for x in v)
    raise ValueError(f"unknown column type {col_type!r}")


def normalize_value(col_type: str, v: Any) -> Any:
    """Canonical in-memory representation of a validated value."""
    if col_type == "int":
        return int(v)
    if col_type == "float":
        return float(v)
    if col_type == "string-sequence":
        return list(v)
    if col_type == "float-sequence":
        return [float(x) for x in v]
    return v


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, uniquely named, typed columns."""

    columns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in schema: {names}")
        for name, typ in self.columns:
            if typ not in COLUMN_TYPES:
                raise ValueError(f"column {name!r} has unknown type {typ!r}")

    @classmethod
    def of(cls, columns: Iterable[tuple[str, str]] | Mapping[str, str]) -> "FeatureSchema":
        if isinstance(columns, Mapping):
            columns = columns.items()
        return cls(tuple((str(n), str(t)) for n, t in columns))

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, str]]) -> "FeatureSchema":
        return cls(tuple((d["name"], d["type"]) for d in data))

    def to_json(self) -> list[dict[str, str]]:
        return [{"name": n, "type": t} for n, t in self.columns]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    def type_of(self, name: str) -> str:
        return dict(self.columns)[name]

    def fingerprint(self) -> int:
        text = "\x1f".join(f"{n}\x1e{t}" for n, t in self.columns).encode("utf-8")
        return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")

    def check_kind(self, kind: ModuleKind) -> None:
        required = REQUIRED_COLUMNS[kind]
        missing = [c for c in required if c not in self.names]
        if missing:
            raise SchemaMismatch(f"{kind.value} modules require columns {list(required)}; missing {missing}")
        if kind is ModuleKind.MEASUREMENT and "references" in self.names:
            raise SchemaMismatch("measurement modules take no references column")

    def require_same(self, other: "FeatureSchema") -> None:
        if self.columns != other.columns:
            raise IncompatibleSchemas(f"schemas differ: {self.to_json()} vs {other.to_json()}")

    def validate_batch(self, batch: Mapping[str, Sequence[Any]], allow_empty: bool = False) -> dict[str, list]:
        """Check a column map against the schema and return normalized columns.

        Raises SchemaMismatch for missing/extra columns or wrongly typed values
        and RaggedBatch for unequal lengths or an empty batch.
        """
        expected = self.names
        got = list(batch.keys())
        if set(got) != set(expected):
            missing = [c for c in expected if c not in batch]
            extra = [c for c in got if c not in expected]
            raise SchemaMismatch(f"batch columns {got} do not match schema {expected}"
                                 f" (missing {missing}, unexpected {extra})")
        lengths = {}
        for name in expected:
            col = batch[name]
            if isinstance(col, (str, bytes, Mapping)) or not hasattr(col, "__len__"):
                raise SchemaMismatch(f"column {name!r} must be a sequence, got {type(col).__name__}")
            lengths[name] = len(col)
        if len(set(lengths.values())) > 1:
            raise RaggedBatch(f"columns have unequal lengths: {lengths}")
        n = next(iter(lengths.values())) if lengths else 0
        if n == 0 and not allow_empty:
            raise RaggedBatch("batch has zero rows")
        out: dict[str, list] = {}
        for name, typ in self.columns:
            col = list(batch[name])
            for i, v in enumerate(col):
                if hasattr(v, "item") and not _is_seq(v):  # numpy scalar
                    v = v.item()
                    col[i] = v
                if not value_matches(typ, v):
                    raise SchemaMismatch(f"column {name!r} row {i}: {v!r} is not of type {typ}")
            out[name] = [normalize_value(typ, v) for v in col]
        return out
