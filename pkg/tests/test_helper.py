import argparse
import json

import pytest

import logic.helper as hlp


def test_generate_execution_id():
    execution_id = hlp.generate_execution_id({'experiment': 'blur_study', 'variants': ['none', 'low'], 'steps': 4})

    assert execution_id == 'experiment-blur_study-variants-none-low-steps-4'


def test_generate_execution_id_is_capped():
    args = {'k{}'.format(i): 'x' * 40 for i in range(8)}

    assert len(hlp.generate_execution_id(args)) == 100


def test_create_run_dir_counts_runs(tmp_path):
    # GIVEN
    output_dir = tmp_path / 'output'

    # WHEN
    first = hlp.create_run_dir(output_dir, 'expand')
    second = hlp.create_run_dir(output_dir, 'expand')

    # THEN
    assert first == output_dir / '1-expand'
    assert second == output_dir / '2-expand'
    assert first.is_dir() and second.is_dir()
    assert hlp.read_seq_id(output_dir / 'sequence.dat') == 2


def test_export_and_read_args(tmp_path):
    path = tmp_path / 'args.json'

    hlp.export_json_file({'seed': 3, 'out': tmp_path}, path)

    assert hlp.read_args_from_file(path) == {'seed': 3, 'out': str(tmp_path)}


def test_read_args_rejects_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        hlp.read_args_from_file(tmp_path / 'missing.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{seed: 3', encoding='utf-8')
    with pytest.raises(ValueError):
        hlp.read_args_from_file(bad)
    not_flat = tmp_path / 'list.json'
    not_flat.write_text(json.dumps([1, 2]), encoding='utf-8')
    with pytest.raises(ValueError, match='key/value'):
        hlp.read_args_from_file(not_flat)


def test_merge_args_precedence():
    defaults = {'seed': 42, 'epochs': 30, 'lr': 0.01}

    merged = hlp.merge_args(defaults, {'seed': 7, 'epochs': 5}, {'epochs': 2})

    assert merged == {'seed': 7, 'epochs': 2, 'lr': 0.01}


def test_merge_args_rejects_unknown_keys():
    with pytest.raises(ValueError, match='warp_speed'):
        hlp.merge_args({'seed': 42}, {'warp_speed': 9}, {})


@pytest.mark.parametrize('type_fn, value, expected', [
    (hlp.positive_int, '3', 3),
    (hlp.non_negative_int, '0', 0),
    (hlp.positive_float, '0.5', 0.5),
    (hlp.fraction, '1', 1.0),
    (hlp.comma_list, 'none, low,high', ['none', 'low', 'high']),
    (hlp.comma_list, '0.1,0.25', ['0.1', '0.25']),
    (hlp.comma_list, 'dynamic_strength:0.2,0.8,latent_alteration:0.1,plain',
     ['dynamic_strength:0.2,0.8', 'latent_alteration:0.1', 'plain']),
])
def test_argument_types(type_fn, value, expected):
    assert type_fn(value) == expected


@pytest.mark.parametrize('type_fn, value', [
    (hlp.positive_int, '0'),
    (hlp.non_negative_int, '-1'),
    (hlp.positive_float, '-0.1'),
    (hlp.fraction, '1.5'),
    (hlp.fraction, '0'),
    (hlp.comma_list, 'a,,b'),
])
def test_argument_types_reject(type_fn, value):
    with pytest.raises(argparse.ArgumentTypeError):
        type_fn(value)


def test_execution_id_has_no_path_separators():
    execution_id = hlp.generate_execution_id({'grammar': '/data/grammars/rap.json'})

    assert '/' not in execution_id
    assert execution_id == 'grammar-_data_grammars_rap.json'
