import json

import pytest

from logic.errors import SchemaError
from logic.schemas import SCHEMA_MAPPING, load_schema


@pytest.mark.parametrize('dataset_id', list(SCHEMA_MAPPING))
def test_built_in_schemas_load(dataset_id):
    schema = load_schema(dataset_id)

    assert schema.dataset_id == dataset_id
    assert len(schema) == len(set(schema.attributes))
    assert all(schema.phrases[a] for a in schema.attributes)
    # every attribute is found by its own phrase
    assert all(schema.lookup_phrase(schema.phrases[a]) == a for a in schema.attributes)


def test_pa100k_has_26_attributes():
    assert len(load_schema('PA100k')) == 26


def test_schema_file_round_trip(tmp_path, toy_schema):
    path = tmp_path / 'schema.json'
    path.write_text(json.dumps(toy_schema.to_record()), encoding='utf-8')

    loaded = load_schema(str(path))

    assert loaded == toy_schema
    assert loaded.fingerprint() == toy_schema.fingerprint()


def test_fingerprint_depends_on_attributes():
    assert load_schema('RAPzs').fingerprint() != load_schema('PETAzs').fingerprint()
    assert load_schema('RAPzs').fingerprint() == load_schema('RAPzs').fingerprint()


def test_unknown_schema():
    with pytest.raises(SchemaError, match='neither a built-in schema'):
        load_schema('Market1501')


def test_exclusive_categories(toy_schema):
    assert toy_schema.category('gender').exclusive
    assert not toy_schema.category_of('Hat').exclusive
    with pytest.raises(SchemaError):
        toy_schema.category('shoes')
