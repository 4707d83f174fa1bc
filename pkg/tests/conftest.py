import numpy as np
import pytest

from logic.backends import MockBackend
from logic.conditioning import save_image
from logic.dataset import (AttributeSchema, AttributeVector, Category, DatasetManifest, PedestrianSample,
                           load_manifest, save_manifest)
from logic.embedders import MockEmbedder
from logic.grammars import Grammar, Segment, Slot

IMAGE_HEIGHT = 32
IMAGE_WIDTH = 16


def make_toy_schema():
    categories = [
        Category('gender', ('Male', 'Female'), exclusive=True),
        Category('head', ('Hat', 'LongHair')),
        Category('attachment', ('Backpack',)),
        Category('upper body', ('Jacket', 'TShirt')),
    ]
    phrases = {'Male': 'man', 'Female': 'woman', 'Hat': 'hat', 'LongHair': 'long hair', 'Backpack': 'backpack',
               'Jacket': 'jacket', 'TShirt': 't-shirt'}
    return AttributeSchema('toy', categories, phrases, 'toy dataset of pedestrians.')


def make_toy_grammar():
    return Grammar(
        grammar_id='toy',
        dataset_id='toy',
        gender=Slot('gender', (('Male', 'man'), ('Female', 'woman'))),
        segments=(
            Segment('with', (Slot('head', (('Hat', 'hat'), ('LongHair', 'long hair'))),)),
            Segment('carrying', (Slot('attachment', (('Backpack', 'backpack'),)),)),
            Segment('wearing', (Slot('upper body', (('Jacket', 'jacket'), ('TShirt', 't-shirt'))),)),
        ),
    )


def random_vector(schema, rng):
    """Random annotation that respects exclusive categories."""
    values = [0] * len(schema)
    for category in schema.categories:
        if category.exclusive:
            choice = rng.integers(len(category.attributes) + 1)
            if choice < len(category.attributes):
                values[schema.index(category.attributes[choice])] = 1
        else:
            for attribute in category.attributes:
                values[schema.index(attribute)] = int(rng.integers(2))
    return AttributeVector(tuple(values))


def write_toy_dataset(directory, n_train=10, n_val=4, n_test=4, seed=0):
    """Toy manifest with generated PNG images under directory/images; returns the manifest path."""
    schema = make_toy_schema()
    rng = np.random.default_rng(seed)
    samples = []
    splits = ['train'] * n_train + ['val'] * n_val + ['test'] * n_test
    for i, split in enumerate(splits):
        sample_id = "s{:03d}".format(i)
        image = rng.integers(0, 256, size=(IMAGE_HEIGHT, IMAGE_WIDTH, 3)).astype(np.uint8)
        save_image(image, directory / 'images' / "{}.png".format(sample_id))
        samples.append(PedestrianSample(sample_id=sample_id, image_path="images/{}.png".format(sample_id),
                                        attributes=random_vector(schema, rng), split=split, bbox=(4, 8, 8, 16)))
    manifest = DatasetManifest(schema=schema, samples=tuple(samples), metadata={'seed': seed})
    return save_manifest(manifest, directory / 'manifest.jsonl')


@pytest.fixture
def toy_schema():
    return make_toy_schema()


@pytest.fixture
def toy_grammar():
    return make_toy_grammar()


@pytest.fixture
def toy_manifest_path(tmp_path):
    return write_toy_dataset(tmp_path / 'data')


@pytest.fixture
def toy_manifest(toy_manifest_path):
    return load_manifest(toy_manifest_path)


@pytest.fixture
def mock_backend():
    return MockBackend()


@pytest.fixture
def mock_embedder():
    return MockEmbedder()
