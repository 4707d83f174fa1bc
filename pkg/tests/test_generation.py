from dataclasses import replace

import numpy as np
import pytest

from logic.backends import BIT_EXACT, MockBackend, derive_seed, make_backend
from logic.dataset import AttributeVector
from logic.errors import GenerationError
from logic.generation import (NAMED_CONFIGS, GenerationConfig, TechniqueSpec, TokenEntry, TokenLibrary, apply_tokens,
                              compute_dynamic_strength, generate, load_token_library, named_config, parse_technique,
                              revert_tokens, save_token_library, token_for, train_attribute_tokens)
from logic.prompts import PromptRecord


def _image(seed=0, height=32, width=16):
    return np.random.default_rng(seed).integers(0, 256, size=(height, width, 3)).astype(np.uint8)


PROMPT = PromptRecord("A man with hat.", frozenset({'Male', 'Hat'}), 'toy', 's000')


def test_named_configs():
    assert NAMED_CONFIGS['HiSt_HiSc'] == (0.6, 15.0)
    assert NAMED_CONFIGS['HiSt_LoSc'] == (0.6, 3.0)
    assert NAMED_CONFIGS['LoSt_LoSc'] == (0.2, 3.0)

    config = named_config('HiSt_LoSc', steps=10, seed=3)

    assert (config.strength, config.scale, config.steps, config.seed, config.name) == (0.6, 3.0, 10, 3, 'HiSt_LoSc')
    with pytest.raises(ValueError):
        named_config('MidSt_MidSc')


@pytest.mark.parametrize('kwargs', [{'strength': 1.5, 'scale': 3.0}, {'strength': 0.5, 'scale': -1.0},
                                    {'strength': 0.5, 'scale': 3.0, 'steps': 0}])
def test_generation_config_validation(kwargs):
    with pytest.raises(ValueError):
        GenerationConfig(**kwargs)


def test_zero_strength_returns_init(mock_backend):
    init = _image()

    result = generate(mock_backend, init, PROMPT, GenerationConfig(strength=0.0, scale=7.5))

    assert np.array_equal(result.image, init)
    assert result.metadata['effective_strength'] == 0.0


def test_generation_is_deterministic(mock_backend):
    init = _image()
    config = named_config('HiSt_HiSc', seed=11)

    first = generate(mock_backend, init, PROMPT, config)
    second = generate(MockBackend(), init, PROMPT, config)
    other_seed = generate(mock_backend, init, PROMPT, named_config('HiSt_HiSc', seed=12))

    assert mock_backend.determinism == BIT_EXACT
    assert np.array_equal(first.image, second.image)
    assert not np.array_equal(first.image, other_seed.image)
    assert first.metadata == second.metadata


def test_deviation_grows_with_strength(mock_backend):
    init = _image()

    deviations = [np.abs(generate(mock_backend, init, PROMPT, GenerationConfig(strength=s, scale=3.0, seed=5))
                         .image.astype(int) - init.astype(int)).mean()
                  for s in (0.0, 0.2, 0.6, 1.0)]

    assert deviations == sorted(deviations)
    assert deviations[0] == 0
    assert deviations[3] > deviations[1]


def test_generate_checks_granularity(mock_backend):
    with pytest.raises(GenerationError, match='granularity'):
        generate(mock_backend, _image(height=30, width=16), PROMPT, named_config('LoSt_LoSc'))


def test_generate_wraps_backend_errors(mocker, mock_backend):
    mocker.patch.object(mock_backend, 'generate', side_effect=MemoryError('out of memory'))

    with pytest.raises(GenerationError, match='out of memory'):
        generate(mock_backend, _image(), PROMPT, named_config('LoSt_LoSc'))


def test_dynamic_strength_endpoints():
    assert compute_dynamic_strength(1.0) == pytest.approx(0.2)
    assert compute_dynamic_strength(0.0) == pytest.approx(0.8)
    assert compute_dynamic_strength(0.5, 0.1, 0.3) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        compute_dynamic_strength(1.2)
    with pytest.raises(ValueError):
        compute_dynamic_strength(0.5, 0.6, 0.4)


def test_generate_with_dynamic_strength(mock_backend):
    init = _image()
    technique = TechniqueSpec('dynamic_strength', s_min=0.1, s_max=0.9)

    result = generate(mock_backend, init, PROMPT, named_config('HiSt_HiSc'), technique)

    similarity = mock_backend.image_text_similarity(init, PROMPT.text)
    assert result.metadata['effective_strength'] == pytest.approx(0.1 + (1 - similarity) * 0.8, abs=1e-6)
    assert result.metadata['technique'] == {'kind': 'dynamic_strength', 's_min': 0.1, 's_max': 0.9}


def test_latent_alteration_changes_output(mock_backend):
    init = _image()
    config = named_config('LoSt_LoSc', seed=2)

    plain = generate(mock_backend, init, PROMPT, config)
    altered = generate(mock_backend, init, PROMPT, config, TechniqueSpec('latent_alteration', amplitude=0.5))
    again = generate(mock_backend, init, PROMPT, config, TechniqueSpec('latent_alteration', amplitude=0.5))

    assert not np.array_equal(plain.image, altered.image)
    assert np.array_equal(altered.image, again.image)


def test_textual_inversion_rewrites_prompt(mock_backend):
    library = TokenLibrary({'Hat': TokenEntry(token_for('Hat'), 'hat', [1.0, 2.0, 3.0], 4)})

    result = generate(mock_backend, _image(), PROMPT, named_config('HiSt_HiSc'),
                      TechniqueSpec('textual_inversion', library=library))

    assert result.metadata['prompt'] == "A man with <pedattr-hat>."
    assert mock_backend.tokens == {'<pedattr-hat>': [1.0, 2.0, 3.0]}
    with pytest.raises(GenerationError, match='token library'):
        generate(mock_backend, _image(), PROMPT, named_config('HiSt_HiSc'), TechniqueSpec('textual_inversion'))


def test_apply_and_revert_tokens():
    library = TokenLibrary({'LongHair': TokenEntry(token_for('LongHair'), 'long hair', [0.0], 1),
                            'Hat': TokenEntry(token_for('Hat'), 'hat', [0.0], 1)})
    prompt = PromptRecord("A woman with long hair hat.", frozenset({'LongHair', 'Hat'}), 'toy')

    tokenized = apply_tokens(prompt, library)

    assert tokenized.text == "A woman with <pedattr-longhair> <pedattr-hat>."
    assert tokenized.attributes == prompt.attributes
    assert revert_tokens(tokenized, library) == prompt


def test_train_attribute_tokens(toy_manifest, mock_backend):
    # GIVEN five samples with a hat and none with a backpack
    schema = toy_manifest.schema
    manifest = toy_manifest.with_samples(replace(s, attributes=AttributeVector.from_names(schema, ['Male', 'Hat']))
                                         for s in toy_manifest.samples[:5])

    # WHEN
    library = train_attribute_tokens(mock_backend, manifest, schema, ['Hat', 'Backpack'], steps=5, seed=1,
                                     max_images=3)

    # THEN
    assert set(library.tokens) == {'Hat'}
    assert library.errors == {'Backpack': 'no positive samples'}
    assert library.tokens['Hat'].subset_size == 3
    assert len(library.tokens['Hat'].handle) == 3


def test_token_library_file_round_trip(tmp_path):
    library = TokenLibrary({'Hat': TokenEntry('<pedattr-hat>', 'hat', [0.5, 0.25], 2)}, {'steps': 5},
                           {'Backpack': 'no positive samples'})

    path = save_token_library(library, tmp_path / 'tokens.json')

    assert load_token_library(path) == library


@pytest.mark.parametrize('text, expected', [
    ('plain', TechniqueSpec('plain')),
    ('textual_inversion', TechniqueSpec('textual_inversion')),
    ('dynamic_strength:0.3,0.7', TechniqueSpec('dynamic_strength', s_min=0.3, s_max=0.7)),
    ('latent_alteration:0.05', TechniqueSpec('latent_alteration', amplitude=0.05)),
])
def test_parse_technique(text, expected):
    assert parse_technique(text) == expected


@pytest.mark.parametrize('text', ['inpainting', 'dynamic_strength:0.9,0.1', 'plain:1', 'latent_alteration:x'])
def test_parse_technique_rejects(text):
    with pytest.raises(ValueError):
        parse_technique(text)


def test_derive_seed_is_stable():
    assert derive_seed(42, 's001', 0) == derive_seed(42, 's001', 0)
    assert derive_seed(42, 's001', 0) != derive_seed(42, 's001', 1)
    assert 0 <= derive_seed('x') < 2 ** 63


def test_unknown_backend():
    with pytest.raises(GenerationError, match='unknown backend'):
        make_backend('dall-e')
