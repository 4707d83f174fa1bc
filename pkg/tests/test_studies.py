import numpy as np
import pytest

from logic.backends import MockBackend
from logic.embedders import MockEmbedder
from logic.metrics import load_report
from logic.partrainer import load_model
from logic.reports import StudyReport, load_any_report, read_grid_csv
from logic.studies import ExperimentConfig, run_eval, run_report, run_study, run_train
from tests.conftest import make_toy_grammar

CONFIGS = ('HiSt_HiSc', 'HiSt_LoSc', 'LoSt_LoSc')


def _study(manifest_path, experiment, **params):
    params.setdefault('grammar', make_toy_grammar())
    params.setdefault('steps', 4)
    return ExperimentConfig(experiment=experiment, manifest_path=str(manifest_path), n_conditional=6, seed=1,
                            params=params)


def test_blur_study_fills_the_grid(toy_manifest_path, tmp_path):
    # GIVEN
    config = _study(toy_manifest_path, 'blur_study')

    # WHEN
    report = run_study(config, MockBackend(), MockEmbedder(), run_dir=tmp_path, display_progress=False)

    # THEN
    assert report.grid.shape == (4, 3)
    assert list(report.grid.index) == ['none', 'low', 'medium', 'high']
    assert list(report.grid.columns) == list(CONFIGS)
    assert all(isinstance(v, float) and v >= 0 for v in report.grid.values.ravel())
    assert report.failures == {}
    assert report.reference_fid.n_a == 6 and report.reference_fid.n_b == 18
    assert read_grid_csv(tmp_path / 'study-grid.csv').shape == (4, 3)
    assert (tmp_path / 'study-grid.txt').exists()
    assert (tmp_path / 'figures' / 'study-blur_study.png').exists()
    assert len(list((tmp_path / 'generated' / 'high' / 'LoSt_LoSc').iterdir())) == 6
    assert isinstance(load_any_report(tmp_path / 'study-report.json'), StudyReport)


def test_study_is_reproducible(toy_manifest_path):
    config = _study(toy_manifest_path, 'blur_study', variants=['none', 'high'])

    first = run_study(config, MockBackend(), MockEmbedder(), display_progress=False)
    second = run_study(config, MockBackend(), MockEmbedder(), display_progress=False)

    assert first.grid.values.tolist() == second.grid.values.tolist()


def test_equal_resolution_variants_give_equal_rows(toy_manifest_path):
    config = _study(toy_manifest_path, 'resolution_study', variants=['1.0', '1'])

    report = run_study(config, MockBackend(), MockEmbedder(), display_progress=False)

    assert list(report.grid.index) == ['1.0', '1']
    assert report.grid.loc['1.0'].tolist() == pytest.approx(report.grid.loc['1'].tolist())


def test_failed_preparation_marks_cells(toy_manifest_path):
    # 32x16 images cannot be downscaled by 0.25 above the 8 pixel granularity
    config = _study(toy_manifest_path, 'resolution_study', variants=['0.5', '0.25'])

    report = run_study(config, MockBackend(), MockEmbedder(), display_progress=False)

    assert isinstance(report.grid.loc['0.5', 'HiSt_HiSc'], float)
    assert report.grid.loc['0.25'].tolist() == ['FAIL(6)'] * 3
    assert report.failures['0.25|LoSt_LoSc'] == 6


def test_technique_study(toy_manifest_path):
    config = _study(toy_manifest_path, 'technique_study', token_steps=3)

    report = run_study(config, MockBackend(), MockEmbedder(), display_progress=False)

    assert report.grid.shape == (3, 3)
    assert list(report.grid.index) == ['textual_inversion', 'dynamic_strength', 'latent_alteration']
    assert report.failures == {}


def test_study_checks_sample_count(toy_manifest_path):
    config = ExperimentConfig(experiment='blur_study', manifest_path=str(toy_manifest_path), n_conditional=50)

    with pytest.raises(ValueError, match='exceeds'):
        run_study(config, MockBackend(), MockEmbedder(), display_progress=False)
    with pytest.raises(ValueError, match='not a study'):
        run_study(ExperimentConfig(experiment='train', manifest_path='m.jsonl'), MockBackend(), MockEmbedder())


@pytest.mark.parametrize('kwargs, message', [
    ({'experiment': 'style_study', 'manifest_path': 'm'}, 'unknown experiment'),
    ({'experiment': 'blur_study', 'manifest_path': 'm', 'n_conditional': 1}, 'n_conditional'),
    ({'experiment': 'blur_study', 'manifest_path': 'm', 'configs': ('MidSt',)}, 'invalid configurations'),
    ({'experiment': 'train'}, 'needs a manifest'),
    ({'experiment': 'eval', 'manifest_path': 'm'}, 'model'),
    ({'experiment': 'prompt_study', 'manifest_path': 'm', 'params': {'variants': ['llm-dalda']}}, 'llm_responses'),
    ({'experiment': 'blur_study', 'manifest_path': 'm', 'params': {'prompt': 'fancy'}}, 'unknown prompt builder'),
])
def test_experiment_config_validation(kwargs, message):
    with pytest.raises(ValueError, match=message):
        ExperimentConfig(**kwargs)


def test_report_needs_no_manifest():
    config = ExperimentConfig(experiment='report', params={'reports': ['a.json']})

    assert config.manifest_path is None


def test_train_eval_and_report(toy_manifest_path, tmp_path):
    # GIVEN
    train_dir, eval_dir, report_dir = tmp_path / 'train', tmp_path / 'eval', tmp_path / 'report'
    for directory in (train_dir, eval_dir, report_dir):
        directory.mkdir()
    train_config = ExperimentConfig(experiment='train', manifest_path=str(toy_manifest_path), seed=3,
                                    params={'epochs': 3, 'batch_size': 4})

    # WHEN
    paths = run_train(train_config, train_dir, display_progress=False)
    eval_config = ExperimentConfig(experiment='eval', manifest_path=str(toy_manifest_path),
                                   params={'model': str(paths['model'])})
    eval_paths = run_eval(eval_config, eval_dir)
    report_config = ExperimentConfig(experiment='report',
                                     params={'reports': [str(paths['ma_report']), str(eval_paths['ma_report'])]})
    rendered = run_report(report_config, report_dir)

    # THEN
    model = load_model(paths['model'])
    assert model.backbone_id == 'mock'
    assert len(model.metadata['history']) <= 3
    assert (train_dir / 'train-history.csv').exists()
    assert load_report(eval_paths['ma_report']).attributes == model.attributes
    assert report_dir / 'comparison.csv' in rendered['renderings']


def test_report_renders_one_report(toy_manifest_path, tmp_path):
    report = run_study(_study(toy_manifest_path, 'aspect_study', variants=['original', 'square']), MockBackend(),
                       MockEmbedder(), run_dir=tmp_path / 'study', display_progress=False)
    out = tmp_path / 'out'

    rendered = run_report(ExperimentConfig(experiment='report',
                                           params={'reports': [str(tmp_path / 'study' / 'study-report.json')]}), out)

    assert read_grid_csv(out / 'study-grid.csv').values.ravel().tolist() == \
        pytest.approx(report.grid.values.ravel().tolist())
    assert len(rendered['renderings']) == 3
    assert np.isfinite(report.reference_fid.value)


def test_image_root_overrides_manifest_directory(toy_manifest_path, tmp_path):
    moved = tmp_path / 'elsewhere' / 'manifest.jsonl'
    moved.parent.mkdir()
    moved.write_bytes(toy_manifest_path.read_bytes())
    config = ExperimentConfig(experiment='train', manifest_path=str(moved), image_root=str(toy_manifest_path.parent))

    manifest = config.load_manifest()

    assert all(manifest.image_file(s).exists() for s in manifest.samples)
