import json

import pytest

from logic.backends import MockBackend, derive_seed
from logic.dataset import load_manifest, split_by
from logic.errors import GenerationError, PromptError
from logic.expansion import ExpansionPlan, assign_labels, expand_dataset, synthetic_id
from logic.generation import TechniqueSpec
from logic.prompts import PromptRecord, extract_attributes
from tests.conftest import make_toy_grammar


def _plan(manifest, output_dir, **kwargs):
    return ExpansionPlan(source=manifest, output_dir=output_dir, grammar=make_toy_grammar(), **kwargs)


def test_expansion_adds_one_labelled_sample_per_train_sample(toy_manifest, mock_backend, tmp_path):
    # GIVEN
    plan = _plan(toy_manifest, tmp_path / 'expanded')

    # WHEN
    result = expand_dataset(plan, mock_backend, display_progress=False)

    # THEN
    schema = toy_manifest.schema
    synthetic = [s for s in result.merged.samples if s.source == 'synthetic']
    assert len(result.merged) == len(toy_manifest) + 10
    assert result.failures == []
    assert [s.sample_id for s in synthetic] == [synthetic_id(s.sample_id, 0)
                                                for s in split_by(toy_manifest, 'train').samples]
    for sample in synthetic:
        source = toy_manifest.get(sample.sample_id.split('-syn')[0])
        assert sample.split == 'train'
        assert sample.gen_config_name == 'HiSt_HiSc'
        assert sample.attributes.positives(schema) == extract_attributes(sample.prompt, schema)
        assert sample.attributes.positives(schema) <= source.attributes.positives(schema)
    assert result.summary['n_synthetic'] == 10
    assert result.summary['technique']['kind'] == 'textual_inversion'


def test_expansion_outputs_reload(toy_manifest, mock_backend, tmp_path):
    out = tmp_path / 'expanded'
    expand_dataset(_plan(toy_manifest, out), mock_backend, display_progress=False)

    reloaded = load_manifest(out / 'manifest.jsonl')

    assert len(reloaded) == len(toy_manifest) + 10
    assert all(reloaded.image_file(s).exists() for s in reloaded.samples)
    assert len((out / 'per-sample-log.jsonl').read_text(encoding='utf-8').splitlines()) == 10
    assert (out / 'failures.jsonl').read_text(encoding='utf-8') == ''
    assert (out / 'token-library.json').exists()
    summary = json.loads((out / 'expansion-summary.json').read_text(encoding='utf-8'))
    assert summary['n_real_train'] == 10


def test_expansion_is_reproducible(toy_manifest, tmp_path):
    out = tmp_path / 'expanded'
    expand_dataset(_plan(toy_manifest, out, seed=7), MockBackend(), display_progress=False)
    first_manifest = (out / 'manifest.jsonl').read_bytes()
    first_images = {p.name: p.read_bytes() for p in (out / 'synthetic').iterdir()}

    expand_dataset(_plan(toy_manifest, out, seed=7), MockBackend(), display_progress=False)

    assert (out / 'manifest.jsonl').read_bytes() == first_manifest
    assert {p.name: p.read_bytes() for p in (out / 'synthetic').iterdir()} == first_images


def test_failed_generation_is_recorded(toy_manifest, mock_backend, mocker, tmp_path):
    # GIVEN a backend that fails for one sample
    original = mock_backend.generate
    failing_seed = derive_seed(0, 's003', 0)

    def flaky(init, prompt, strength, scale, steps, seed, latent_noise=0.0):
        if seed == failing_seed:
            raise GenerationError("out of memory")
        return original(init, prompt, strength, scale, steps, seed, latent_noise=latent_noise)

    mocker.patch.object(mock_backend, 'generate', side_effect=flaky)
    out = tmp_path / 'expanded'

    # WHEN
    result = expand_dataset(_plan(toy_manifest, out, technique=TechniqueSpec('plain')), mock_backend,
                            display_progress=False)

    # THEN
    assert len(result.merged) == len(toy_manifest) + 9
    assert len(result.failures) == 1
    assert result.failures[0]['source_id'] == 's003'
    assert 'out of memory' in result.failures[0]['error']
    assert result.summary['n_failures'] == 1
    assert len((out / 'failures.jsonl').read_text(encoding='utf-8').splitlines()) == 1


def test_multiplier_and_mask_mode(toy_manifest, mock_backend, tmp_path):
    plan = _plan(toy_manifest, tmp_path / 'expanded', multiplier=2, label_mode='mask',
                 technique=TechniqueSpec('dynamic_strength'))

    result = expand_dataset(plan, mock_backend, display_progress=False)

    synthetic = [s for s in result.merged.samples if s.source == 'synthetic']
    assert len(synthetic) == 20
    assert synthetic[0].sample_id == 's000-syn0'
    assert synthetic[1].sample_id == 's000-syn1'
    assert all(s.labeled_attributes == toy_manifest.schema.attributes for s in synthetic)
    assert result.merged.metadata['expansion']['label_mode'] == 'mask'


def test_post_expansion_fid(toy_manifest, mock_backend, mock_embedder, tmp_path):
    plan = _plan(toy_manifest, tmp_path / 'expanded', technique=TechniqueSpec('plain'))

    result = expand_dataset(plan, mock_backend, embedder=mock_embedder, display_progress=False)

    fid = result.summary['post_expansion_fid']
    assert fid['n_a'] == 10 and fid['n_b'] == 10
    assert fid['value'] >= 0
    assert fid['embedder_id'] == 'mock'


def test_plan_validation(toy_manifest, tmp_path):
    with pytest.raises(ValueError, match='multiplier'):
        _plan(toy_manifest, tmp_path, multiplier=0)
    with pytest.raises(ValueError, match='configuration'):
        _plan(toy_manifest, tmp_path, config_name='MidSt')
    with pytest.raises(ValueError, match='label mode'):
        _plan(toy_manifest, tmp_path, label_mode='ignore')
    with pytest.raises(ValueError, match='no train samples'):
        _plan(split_by(toy_manifest, 'test'), tmp_path)


def test_assign_labels(toy_schema):
    vector = assign_labels(PromptRecord("A man with hat.", frozenset({'Male', 'Hat'}), 'toy'), toy_schema)

    assert vector.positives(toy_schema) == frozenset({'Male', 'Hat'})
    with pytest.raises(PromptError):
        assign_labels(PromptRecord("A dog.", frozenset({'Dog'}), 'toy'), toy_schema)
