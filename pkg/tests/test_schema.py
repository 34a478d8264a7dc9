import pytest

from evalkit.errors import RaggedBatch, SchemaMismatch
from evalkit.schema import FeatureSchema, ModuleKind

PAIR = FeatureSchema.of({"predictions": "int", "references": "int"})


def test_validate_batch_normalizes_columns():
    cols = PAIR.validate_batch({"predictions": (1, 0), "references": [1, 1]})
    assert cols == {"predictions": [1, 0], "references": [1, 1]}


def test_float_column_accepts_ints():
    schema = FeatureSchema.of({"data": "float"})
    assert schema.validate_batch({"data": [1, 2.5]})["data"] == [1.0, 2.5]


@pytest.mark.parametrize("batch", [
    {"predictions": [1]},
    {"predictions": [1], "references": [1], "extra": [1]},
    {"predictions": ["a"], "references": [1]},
    {"predictions": [True], "references": [1]},
])
def test_schema_mismatch(batch):
    with pytest.raises(SchemaMismatch):
        PAIR.validate_batch(batch)


def test_ragged_batch():
    with pytest.raises(RaggedBatch):
        PAIR.validate_batch({"predictions": [1, 0], "references": [1]})


def test_empty_batch_is_rejected_unless_allowed():
    with pytest.raises(RaggedBatch):
        PAIR.validate_batch({"predictions": [], "references": []})
    assert PAIR.validate_batch({"predictions": [], "references": []}, allow_empty=True)["predictions"] == []


def test_kind_requires_columns():
    with pytest.raises(SchemaMismatch):
        FeatureSchema.of({"data": "int"}).check_kind(ModuleKind.METRIC)
    FeatureSchema.of({"predictions_a": "int", "predictions_b": "int", "references": "int"}).check_kind(ModuleKind.COMPARISON)
    FeatureSchema.of({"data": "string"}).check_kind(ModuleKind.MEASUREMENT)


def test_json_round_trip_and_fingerprint():
    again = FeatureSchema.from_json(PAIR.to_json())
    assert again == PAIR
    assert again.fingerprint() == PAIR.fingerprint()
    assert FeatureSchema.of({"predictions": "int", "references": "float"}).fingerprint() != PAIR.fingerprint()


def test_measurement_rejects_references():
    with pytest.raises(SchemaMismatch):
        FeatureSchema.of({"data": "int", "references": "int"}).check_kind(ModuleKind.MEASUREMENT)
