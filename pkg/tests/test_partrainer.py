import numpy as np
import pytest

from logic.dataset import (AttributeSchema, AttributeVector, DatasetManifest, PedestrianSample, merge_manifests,
                           split_by)
from logic.embedders import ArrayEmbedder, TorchvisionBackbone
from logic.errors import TrainingError
from logic.expansion import assign_labels, synthetic_id
from logic.metrics import AttributeMA, MAReport
from logic.partrainer import (TrainConfig, TrainedModel, compare_reports, evaluate, history_frame, label_matrix,
                              load_model, save_model, train)
from logic.prompts import PromptRecord

ATTRIBUTES = ('a0', 'a1', 'a2', 'a3', 'a4')
FAST = dict(lr=0.1, batch_size=16, epochs=50, plateau_patience=50, early_stop_patience=50, seed=3)


def _separable_dataset(n_train=200, n_val=60, n_test=60, dim=8, seed=0):
    """Features drawn at random, labels given by the signs of a fixed linear map."""
    schema = AttributeSchema('features', [('all', ATTRIBUTES)], {a: "attribute {}".format(a[1]) for a in ATTRIBUTES})
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=(len(ATTRIBUTES), dim))
    features, samples = {}, []
    splits = ['train'] * n_train + ['val'] * n_val + ['test'] * n_test
    for i, split in enumerate(splits):
        sample_id = "f{:04d}".format(i)
        x = rng.normal(size=dim)
        features[sample_id] = x
        labels = tuple(int(v) for v in (w_true @ x > 0))
        samples.append(PedestrianSample(sample_id, sample_id + '.png', AttributeVector(labels), split=split))
    manifest = DatasetManifest(schema=schema, samples=tuple(samples))
    return manifest, ArrayEmbedder(features, 'toy-features'), w_true


def test_train_config_validation():
    assert TrainConfig().head_lr == 0.01
    assert TrainConfig(lr_new=0.1, lr_fr=0.001).head_lr == 0.1
    assert TrainConfig(lr_fr=0.001).backbone_lr == 0.001
    with pytest.raises(ValueError, match='epochs'):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer='adam')


def test_train_learns_separable_attributes():
    # GIVEN
    manifest, provider, _ = _separable_dataset()

    # WHEN
    model = train(manifest, TrainConfig(**FAST), provider)

    # THEN
    history = model.metadata['history']
    assert len(history) == 50
    assert history[0]['lr'] == pytest.approx(0.01)
    assert history[1]['lr'] == pytest.approx(0.1)
    assert history[-1]['loss'] < history[0]['loss'] / 2
    assert model.metadata['monitor_split'] == 'val'
    assert model.metadata['best_val_ma'] > 90
    assert evaluate(model, manifest, 'test', provider).mean_ma > 90


def test_train_is_deterministic():
    manifest, provider, _ = _separable_dataset(n_train=60, n_val=20, n_test=0)
    config = TrainConfig(**dict(FAST, epochs=5))

    first = train(manifest, config, provider)
    second = train(manifest, config, provider)

    assert np.array_equal(first.weights, second.weights)
    assert np.array_equal(first.bias, second.bias)
    assert first.metadata['history'] == second.metadata['history']


def test_train_monitors_train_split_without_val():
    manifest, provider, _ = _separable_dataset(n_train=60, n_val=0, n_test=0)

    model = train(manifest, TrainConfig(**dict(FAST, epochs=3)), provider)

    assert model.metadata['monitor_split'] == 'train'
    assert 1 <= model.metadata['best_epoch'] <= 3


def test_early_stop():
    manifest, provider, _ = _separable_dataset(n_train=60, n_val=20, n_test=0)

    model = train(manifest, TrainConfig(**dict(FAST, epochs=40, early_stop_patience=2)), provider)

    assert len(model.metadata['history']) < 40
    assert model.metadata['best_epoch'] == len(model.metadata['history']) - 2


def test_train_needs_train_samples():
    manifest, provider, _ = _separable_dataset(n_train=0, n_val=10, n_test=10)

    with pytest.raises(TrainingError, match='no train samples'):
        train(manifest, TrainConfig(), provider)


def test_train_reports_non_finite_loss():
    manifest, provider, _ = _separable_dataset(n_train=20, n_val=0, n_test=0)
    provider.features['f0000'] = np.full(8, np.inf)

    with pytest.raises(TrainingError, match='not finite'):
        train(manifest, TrainConfig(**dict(FAST, epochs=2)), provider)


def test_fine_tuning_needs_torchvision_backbone():
    manifest, provider, _ = _separable_dataset(n_train=10, n_val=0, n_test=0)

    with pytest.raises(TrainingError, match='torchvision'):
        train(manifest, TrainConfig(freeze_backbone=False), provider)


def test_oracle_head_scores_100():
    # GIVEN the linear map that produced the labels
    manifest, provider, w_true = _separable_dataset()
    oracle = TrainedModel('toy-features', w_true, np.zeros(len(ATTRIBUTES)), manifest.schema.fingerprint(),
                          ATTRIBUTES)
    inverted = TrainedModel('toy-features', -w_true, np.zeros(len(ATTRIBUTES)), manifest.schema.fingerprint(),
                            ATTRIBUTES)

    # WHEN
    report = evaluate(oracle, manifest, 'test', provider)

    # THEN
    assert report.mean_ma == pytest.approx(100.0)
    assert evaluate(inverted, manifest, 'test', provider).mean_ma == pytest.approx(0.0)


def test_evaluate_checks_split_and_schema(toy_manifest):
    manifest, provider, w_true = _separable_dataset(n_test=0)
    model = TrainedModel('toy-features', w_true, np.zeros(len(ATTRIBUTES)), manifest.schema.fingerprint(),
                         ATTRIBUTES)

    with pytest.raises(TrainingError, match="'test'"):
        evaluate(model, manifest, 'test', provider)
    with pytest.raises(ValueError, match='val or test'):
        evaluate(model, manifest, 'train', provider)
    with pytest.raises(ValueError, match='fingerprint'):
        evaluate(model, toy_manifest, 'val', provider)


def test_trained_model_validation():
    with pytest.raises(ValueError):
        TrainedModel('x', np.zeros((2, 3)), np.zeros(2), 'f', ('a',))
    with pytest.raises(ValueError):
        TrainedModel('x', np.full((1, 3), np.nan), np.zeros(1), 'f', ('a',))


def test_label_matrix_mask_mode(toy_schema):
    samples = [PedestrianSample('x', 'x.png', AttributeVector.from_names(toy_schema, ['Male', 'Hat']),
                                labeled_attributes=('Male',)),
               PedestrianSample('y', 'y.png', AttributeVector.from_names(toy_schema, ['Female']))]
    manifest = DatasetManifest(schema=toy_schema, samples=tuple(samples))

    labels, mask = label_matrix(manifest, samples, 'mask')
    _, negative_mask = label_matrix(manifest, samples, 'negative')

    assert labels[0].tolist() == [1, 0, 1, 0, 0, 0, 0]
    assert mask[0].tolist() == [1, 0, 0, 0, 0, 0, 0]
    assert mask[1].tolist() == [1] * 7
    assert negative_mask.min() == 1
    with pytest.raises(ValueError):
        label_matrix(manifest, samples, 'ignore')


def test_mask_mode_ignores_unlabeled_attributes():
    # GIVEN training labels of a2 replaced by noise but masked out everywhere
    manifest, provider, _ = _separable_dataset(n_train=120, n_val=40, n_test=40)
    rng = np.random.default_rng(9)
    samples = []
    for sample in manifest.samples:
        if sample.split == 'train':
            values = list(sample.attributes.values)
            values[2] = int(rng.integers(2))
            sample = PedestrianSample(sample.sample_id, sample.image_path, AttributeVector(tuple(values)),
                                      split='train', labeled_attributes=('a0', 'a1', 'a3', 'a4'))
        samples.append(sample)
    noisy = manifest.with_samples(samples)

    # WHEN
    model = train(noisy, TrainConfig(**FAST), provider, label_mode='mask')

    # THEN the masked head keeps its initial weights while the others learn
    assert np.abs(model.weights[2]).max() < 0.05
    assert model.metadata['label_mode'] == 'mask'
    report = evaluate(model, noisy, 'test', provider)
    assert np.mean([report.per_attribute[a].ma for a in ('a0', 'a1', 'a3', 'a4')]) > 85


def _report(values, skipped=()):
    attributes = tuple(values) + tuple(skipped)
    return MAReport({a: AttributeMA(0.0, 0.0, v) for a, v in values.items()},
                    sum(values.values()) / len(values), list(skipped), attributes)


def test_compare_reports():
    a = _report({'x': 80.0, 'y': 70.0, 'z': 90.0}, skipped=['w'])
    b = _report({'x': 85.0, 'y': 60.0, 'z': 90.0, 'w': 50.0})

    table = compare_reports(a, b)

    assert list(table.rows['attribute']) == ['x', 'z', 'y']
    assert list(table.rows['delta']) == pytest.approx([5.0, 0.0, -10.0])
    assert table.mean_ma_a == pytest.approx(80.0)
    assert table.mean_ma_b == pytest.approx(235.0 / 3)
    assert table.mean_delta == pytest.approx(-5.0 / 3)


def test_compare_reports_rejects_different_attributes():
    with pytest.raises(ValueError, match='different attributes'):
        compare_reports(_report({'x': 80.0}), _report({'y': 80.0}))


def test_model_file_round_trip(tmp_path):
    manifest, provider, _ = _separable_dataset(n_train=40, n_val=10, n_test=0)
    model = train(manifest, TrainConfig(**dict(FAST, epochs=3)), provider)

    loaded = load_model(save_model(model, tmp_path / 'model.parh'))

    assert loaded.attributes == model.attributes
    assert loaded.schema_fingerprint == model.schema_fingerprint
    assert loaded.metadata == model.metadata
    assert loaded.weights == pytest.approx(model.weights, rel=1e-6, abs=1e-7)
    assert loaded.feature_mean == pytest.approx(model.feature_mean, rel=1e-6, abs=1e-7)
    assert list(history_frame(loaded).columns) == ['epoch', 'loss', 'val_ma', 'lr']


def test_load_model_rejects_other_files(tmp_path):
    path = tmp_path / 'model.parh'
    path.write_bytes(b'not a model')

    with pytest.raises(ValueError, match='not a model artifact'):
        load_model(path)


def test_training_loss_does_not_increase_over_ten_epochs():
    manifest, provider, _ = _separable_dataset()

    model = train(manifest, TrainConfig(**dict(FAST, lr=0.02)), provider)

    losses = [entry['loss'] for entry in model.metadata['history']]
    assert len(losses) == 50
    for start in range(len(losses) - 10):
        assert losses[start + 10] <= losses[start] + 1e-9


@pytest.mark.parametrize('factor', [0.25, 3.0, 1000.0])
def test_rescaled_features_give_the_same_decisions(factor):
    # GIVEN the same dataset with every feature multiplied by a positive constant
    manifest, provider, _ = _separable_dataset()
    scaled = ArrayEmbedder({k: factor * v for k, v in provider.features.items()}, 'toy-features')
    test_samples = split_by(manifest, 'test').samples

    # WHEN
    model = train(manifest, TrainConfig(**FAST), provider)
    scaled_model = train(manifest, TrainConfig(**FAST), scaled)

    # THEN
    decisions = model.predict(provider.embed_samples(manifest, test_samples)) > 0.5
    scaled_decisions = scaled_model.predict(scaled.embed_samples(manifest, test_samples)) > 0.5
    assert (decisions == scaled_decisions).all()


def _expand_features(manifest, provider, seed, noise=0.01):
    """One synthetic sample per train sample: features close to the source's, labels read from its prompt."""
    schema = manifest.schema
    rng = np.random.default_rng(seed)
    features = dict(provider.features)
    synthetic = []
    for sample in split_by(manifest, 'train').samples:
        positives = sample.attributes.positives(schema)
        text = "a pedestrian with " + ", ".join(schema.phrases[a] for a in sorted(positives))
        sid = synthetic_id(sample.sample_id, 0)
        prompt = PromptRecord(text, frozenset(positives), 'attribute', sample.sample_id)
        synthetic.append(PedestrianSample(sid, sid + '.png', assign_labels(prompt, schema), split='train',
                                          source='synthetic', prompt=text, gen_config_name='HiSt_HiSc'))
        features[sid] = provider.features[sample.sample_id] + rng.normal(0.0, noise, size=8)
    expanded = merge_manifests(manifest, manifest.with_samples(synthetic))
    return expanded, ArrayEmbedder(features, provider.embedder_id)


def test_expanded_training_keeps_accuracy():
    # GIVEN 5 seeds of the separable dataset and their expansions
    baseline, expanded = [], []
    for seed in range(5):
        manifest, provider, _ = _separable_dataset(n_test=400, seed=seed)
        expanded_manifest, expanded_provider = _expand_features(manifest, provider, seed)
        config = TrainConfig(**dict(FAST, seed=seed))

        # WHEN
        original_model = train(manifest, config, provider)
        expanded_model = train(expanded_manifest, config, expanded_provider)

        baseline.append(evaluate(original_model, manifest, 'test', provider).mean_ma)
        expanded.append(evaluate(expanded_model, manifest, 'test', provider).mean_ma)

    # THEN
    assert len(split_by(expanded_manifest, 'train')) == 400
    assert np.mean(expanded) >= np.mean(baseline) - 0.5


def test_evaluate_loads_fine_tuned_backbone(mocker):
    manifest, provider, w_true = _separable_dataset(n_train=20)
    state = {'layer.weight': [1.0]}
    model = TrainedModel('toy-features', w_true, np.zeros(len(ATTRIBUTES)), manifest.schema.fingerprint(),
                         ATTRIBUTES, backbone_state=state)

    with pytest.raises(TrainingError, match='cannot load'):
        evaluate(model, manifest, 'test', provider)

    provider.load_backbone_state = mocker.Mock()
    assert evaluate(model, manifest, 'test', provider).mean_ma == pytest.approx(100.0)
    provider.load_backbone_state.assert_called_once_with(state)


def test_fine_tuned_backbone_is_saved_with_the_model(toy_manifest, tmp_path):
    torch = pytest.importorskip('torch')

    class TinyBackbone(TorchvisionBackbone):
        embedder_id = 'tiny'
        dim = 4
        input_size = (8, 8)

        def _build(self):
            return torch.nn.Sequential(torch.nn.Conv2d(3, 4, 3, padding=1), torch.nn.ReLU(),
                                       torch.nn.AdaptiveAvgPool2d(1), torch.nn.Flatten())

    # GIVEN a backbone fine-tuned together with the head
    backbone = TinyBackbone(device='cpu')
    config = TrainConfig(freeze_backbone=False, epochs=3, batch_size=4, input_size=(8, 8), lr=0.05)
    model = train(toy_manifest, config, backbone)

    # WHEN the model is reloaded and evaluated with a freshly built backbone
    loaded = load_model(save_model(model, tmp_path / 'model.parh'))
    reloaded_report = evaluate(loaded, toy_manifest, 'test', TinyBackbone(device='cpu'))

    # THEN the backbone weights of the best epoch come along
    assert (tmp_path / 'model.pt').exists()
    for name, value in backbone.model.state_dict().items():
        assert torch.equal(value, model.backbone_state[name])
        assert torch.equal(value, loaded.backbone_state[name])
    report = evaluate(model, toy_manifest, 'test', backbone)
    assert reloaded_report.per_attribute == report.per_attribute
    assert reloaded_report.mean_ma == report.mean_ma
