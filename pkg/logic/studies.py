# -*- coding: utf-8 -*-
"""
Experiment drivers: generation-quality studies (one FID grid of variants x named configurations) and the thin
expand / train / eval / report commands. Every driver writes into a run directory it is given.
"""
import logging
import pathlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from logic.backends import derive_seed, make_backend
from logic.batchrunner import run_cells
from logic.conditioning import (BLUR_LEVELS, CONTEXT_FRACTIONS, RESOLUTION_FACTORS, apply_conditioning,
                                fit_to_granularity, load_image, save_image)
from logic.dataset import load_manifest, random_subset, split_by
from logic.embedders import make_embedder
from logic.expansion import DEFAULT_CONFIG, DEFAULT_TOKEN_STEPS, ExpansionPlan, expand_dataset
from logic.generation import (NAMED_CONFIGS, generate, load_token_library, named_config, parse_technique,
                              train_attribute_tokens)
from logic.grammars import covered_attributes, load_grammar
from logic.llm import FileLlmClient, build_llm_request, parse_llm_response
from logic.metrics import FeatureSet, compute_fid, reference_subset_fid, save_report
from logic.partrainer import (TrainConfig, compare_reports, evaluate, history_frame, load_model, save_model,
                              train)
from logic.prompts import (BASELINE_CLOTHES, BASELINE_COLORS, build_attribute_prompt, build_baseline_prompt,
                           build_caption_prompt, build_integration_prompt)
from logic.reports import FORMATS, StudyReport, emit_report, fail_cell, load_any_report, save_study_report

logger = logging.getLogger(__name__)

STUDIES = ('prompt_study', 'blur_study', 'context_study', 'resolution_study', 'aspect_study', 'technique_study')
EXPERIMENTS = STUDIES + ('expand', 'train', 'eval', 'report')
PROMPT_BUILDERS = ('baseline', 'integration', 'attribute', 'mals-aligned', 'mals-unaligned', 'llm-dalda',
                   'llm-alia')
DEFAULT_VARIANTS = {
    'prompt_study': ('baseline', 'integration', 'attribute'),
    'blur_study': tuple(BLUR_LEVELS),
    'context_study': CONTEXT_FRACTIONS,
    'resolution_study': (1.0,) + RESOLUTION_FACTORS,
    'aspect_study': ('original', 'square', 'wide', 'tall'),
    'technique_study': ('textual_inversion', 'dynamic_strength', 'latent_alteration'),
}
REQUIRED_PARAMS = {
    'eval': ('model',),
    'report': ('reports',),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    manifest_path: str = None
    backend_id: str = 'mock'
    embedder_id: str = 'mock'
    configs: Tuple[str, ...] = tuple(NAMED_CONFIGS)
    seed: int = 42
    n_conditional: int = 100
    output_dir: str = 'output'
    # directory image paths are resolved against; default is the manifest's directory
    image_root: str = None
    # experiment-specific parameters (variants, grammar, technique, multiplier, epochs, ...)
    params: Dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError("unknown experiment '{}' (expected one of {})".format(
                self.experiment, ", ".join(EXPERIMENTS)))
        if self.n_conditional < 2:
            raise ValueError("n_conditional must be at least 2, got {}".format(self.n_conditional))
        unknown = [c for c in self.configs if c not in NAMED_CONFIGS]
        if unknown or not self.configs:
            raise ValueError("invalid configurations {} (expected some of {})".format(
                list(self.configs), ", ".join(NAMED_CONFIGS)))
        if self.experiment != 'report' and not self.manifest_path:
            raise ValueError("experiment {} needs a manifest".format(self.experiment))
        missing = [p for p in REQUIRED_PARAMS.get(self.experiment, ()) if not self.params.get(p)]
        if missing:
            raise ValueError("experiment {} needs the parameter(s): {}".format(self.experiment, ", ".join(missing)))
        builders = self.params.get('variants', ()) if self.experiment == 'prompt_study' else ()
        builders = list(builders) + [self.params.get('prompt', 'attribute')]
        if any(b.startswith('llm-') for b in builders) and not self.params.get('llm_responses'):
            raise ValueError("LLM prompt variants need an llm_responses file")
        bad = [b for b in builders if b not in PROMPT_BUILDERS]
        if bad:
            raise ValueError("unknown prompt builder(s): {}".format(", ".join(bad)))

    def variants(self):
        return tuple(self.params.get('variants') or DEFAULT_VARIANTS[self.experiment])

    def load_manifest(self):
        return load_manifest(self.manifest_path, base_dir=self.image_root)


def _variant_label(value):
    return str(value)


def _conditioning_spec(experiment, variant):
    if experiment == 'blur_study':
        return 'identity' if variant == 'none' else "blur:{}".format(variant)
    if experiment == 'context_study':
        return "context:{}".format(float(variant))
    if experiment == 'resolution_study':
        return "resolution:{}".format(float(variant))
    if experiment == 'aspect_study':
        return 'identity' if variant == 'original' else "aspect:{}".format(variant)
    return 'identity'


class _PromptSource:
    """Builds the prompt of one conditional sample for a prompt builder."""

    def __init__(self, config, manifest, conditional):
        self.config = config
        self.manifest = manifest
        self.schema = manifest.schema
        grammar = config.params.get('grammar')
        self._grammar = grammar
        self.llm_prompts = {}
        responses = config.params.get('llm_responses')
        if responses:
            client = FileLlmClient(responses)
            captions = [s.caption for s in manifest.samples if s.caption]
            for style in ('DALDA', 'ALIA'):
                if style == 'ALIA' and not captions:
                    continue
                request = build_llm_request(style, self.schema, captions=captions, count=len(conditional))
                self.llm_prompts['llm-' + style.lower()] = parse_llm_response(style, client.send(request),
                                                                              self.schema)

    @cached_property
    def grammar(self):
        return load_grammar(self._grammar if self._grammar is not None else self.schema.dataset_id)

    def build(self, builder, sample, index):
        seed = self.config.seed
        if builder == 'baseline':
            rng = np.random.default_rng(derive_seed(seed, 'baseline', sample.sample_id))
            return build_baseline_prompt(BASELINE_COLORS[rng.integers(len(BASELINE_COLORS))],
                                         BASELINE_CLOTHES[rng.integers(len(BASELINE_CLOTHES))])
        if builder == 'integration':
            return build_integration_prompt({}, derive_seed(seed, 'integration', sample.sample_id))
        if builder == 'attribute':
            return build_attribute_prompt(sample, self.schema, self.grammar)
        if builder in ('mals-aligned', 'mals-unaligned'):
            return build_caption_prompt(sample, self.manifest, aligned=builder == 'mals-aligned', seed=seed)
        prompts = self.llm_prompts.get(builder)
        if not prompts:
            raise ValueError("no {} prompts available".format(builder))
        return prompts[index % len(prompts)]


def _token_technique(config, backend, manifest, grammar):
    technique = parse_technique('textual_inversion')
    if config.params.get('tokens'):
        return replace(technique, library=load_token_library(config.params['tokens']))
    schema = manifest.schema
    covered = covered_attributes(grammar, schema)
    library = train_attribute_tokens(backend, manifest, schema, [a for a in schema.attributes if a in covered],
                                     config.params.get('token_steps', DEFAULT_TOKEN_STEPS), config.seed)
    return replace(technique, library=library)


def run_study(config, backend=None, embedder=None, run_dir=None, formats=FORMATS, display_progress=True):
    """
    Generate one image per conditional sample for every (variant, configuration) cell and score each cell by the
    FID between its images and the full dataset.
    @param config: the ExperimentConfig of a study
    @param backend: the generation Backend. Default is resolved from config.backend_id.
    @param embedder: the Embedder. Default is resolved from config.embedder_id.
    @param run_dir: optional run directory receiving generated images, the report file and its renderings
    @param formats: renderings emitted into run_dir
    @param display_progress: show progress bars
    @return: the StudyReport
    """
    if config.experiment not in STUDIES:
        raise ValueError("{} is not a study".format(config.experiment))
    backend = backend or make_backend(config.backend_id)
    embedder = embedder or make_embedder(config.embedder_id)
    manifest = config.load_manifest()
    if config.n_conditional > len(manifest):
        raise ValueError("n_conditional {} exceeds the {} samples of the manifest".format(config.n_conditional,
                                                                                         len(manifest)))
    conditional = random_subset(manifest, config.n_conditional, config.seed).samples
    full = FeatureSet(embedder.embed_samples(manifest, manifest.samples, display_progress=display_progress),
                      embedder.embedder_id)
    reference = reference_subset_fid(manifest, embedder, config.n_conditional, config.seed, features=full.features)
    logger.info("Reference FID of %d conditional samples against %d: %.2f", config.n_conditional, len(manifest),
                reference.value)

    prompts = _PromptSource(config, manifest, conditional)
    default_builder = config.params.get('prompt', 'attribute')
    originals = [load_image(manifest.image_file(s)) for s in conditional]
    techniques = {}
    if config.experiment == 'technique_study':
        for variant in config.variants():
            if variant == 'textual_inversion':
                techniques[variant] = _token_technique(config, backend, manifest, prompts.grammar)
            else:
                techniques[variant] = parse_technique(str(variant))
        for technique in techniques.values():
            if technique.library is not None:
                for entry in technique.library.tokens.values():
                    backend.register_token(entry.token, entry.handle)

    # conditioning images and prompts are prepared once per variant, errors are kept per sample
    prepared = {}
    for variant in config.variants():
        builder = variant if config.experiment == 'prompt_study' else default_builder
        spec = _conditioning_spec(config.experiment, variant)
        inputs = []
        for index, (sample, image) in enumerate(zip(conditional, originals)):
            try:
                init = apply_conditioning(image, spec, bbox=sample.bbox, granularity=backend.granularity)
                inputs.append((sample, fit_to_granularity(init, backend.granularity),
                               prompts.build(builder, sample, index)))
            except ValueError as e:
                logger.warning("Cannot prepare %s for variant %s: %s", sample.sample_id, variant, e)
                inputs.append((sample, None, None))
        prepared[_variant_label(variant)] = (inputs, techniques.get(variant))

    steps = config.params.get('steps', 50)

    def cell(variant, config_name):
        inputs, technique = prepared[variant]
        base = named_config(config_name, granularity=backend.granularity, steps=steps)
        images, failed = [], 0
        for sample, init, prompt in inputs:
            if init is None:
                failed += 1
                continue
            generation = replace(base, seed=derive_seed(config.seed, sample.sample_id))
            try:
                result = generate(backend, init, prompt, generation, technique)
            except Exception as e:
                logger.warning("Generation failed in cell (%s, %s) for %s: %s", variant, config_name,
                               sample.sample_id, e)
                failed += 1
                continue
            images.append(result.image)
            if run_dir is not None:
                save_image(result.image, pathlib.Path(run_dir) / 'generated' / variant / config_name /
                           "{}.png".format(sample.sample_id))
        if failed:
            return fail_cell(failed), failed
        generated = FeatureSet(embedder.embed(images), embedder.embedder_id)
        return compute_fid(generated, full).value, 0

    labels = [_variant_label(v) for v in config.variants()]
    results = run_cells(cell, labels, list(config.configs), number_workers=backend.max_concurrency,
                        display_progress=display_progress)
    grid = pd.DataFrame(index=pd.Index(labels, name='variant'), columns=list(config.configs), dtype=object)
    failures = {}
    for result in results:
        variant, config_name = result.variant, result.config_name
        if result.failed:
            value, failed = fail_cell(config.n_conditional), config.n_conditional
        else:
            value, failed = result.value
        grid.loc[variant, config_name] = value
        if failed:
            failures["{}|{}".format(variant, config_name)] = failed

    metadata = {
        'backend': backend.backend_id,
        'embedder': embedder.embedder_id,
        'seed': config.seed,
        'n_conditional': config.n_conditional,
        'n_full': len(manifest),
        'dataset': manifest.schema.dataset_id,
        'prompt': default_builder if config.experiment != 'prompt_study' else None,
        'steps': steps,
    }
    report = StudyReport(config.experiment, grid, reference, metadata, failures)
    if run_dir is not None:
        save_study_report(report, pathlib.Path(run_dir) / 'study-report.json')
        emit_report(report, formats, run_dir)
    return report


def run_expand(config, run_dir, backend=None, embedder=None, display_progress=True):
    params = config.params
    source = config.load_manifest()
    technique = parse_technique(params.get('technique', 'textual_inversion'))
    if technique.kind == 'textual_inversion' and params.get('tokens'):
        technique = replace(technique, library=load_token_library(params['tokens']))
    plan = ExpansionPlan(
        source=source,
        output_dir=pathlib.Path(run_dir),
        config_name=params.get('config_name', DEFAULT_CONFIG),
        technique=technique,
        grammar=params.get('grammar'),
        multiplier=params.get('multiplier', 1),
        seed=config.seed,
        label_mode=params.get('label_mode', 'negative'),
        steps=params.get('steps', 50),
        token_steps=params.get('token_steps', DEFAULT_TOKEN_STEPS),
    )
    backend = backend or make_backend(config.backend_id)
    if embedder is None and params.get('quality_gate', True):
        embedder = make_embedder(config.embedder_id)
    result = expand_dataset(plan, backend, embedder=embedder, display_progress=display_progress)
    run_dir = pathlib.Path(run_dir)
    return {
        'manifest': run_dir / 'manifest.jsonl',
        'per_sample_log': run_dir / 'per-sample-log.jsonl',
        'failures': run_dir / 'failures.jsonl',
        'summary': run_dir / 'expansion-summary.json',
        'n_failures': len(result.failures),
    }


def _train_config(config):
    params = config.params
    fields = {k: params[k] for k in ('epochs', 'batch_size', 'lr', 'lr_fr', 'lr_new', 'freeze_backbone',
                                     'warmup_epochs', 'plateau_patience', 'early_stop_patience', 'threshold')
              if params.get(k) is not None}
    return TrainConfig(backbone_id=config.embedder_id, seed=config.seed, **fields)


def run_train(config, run_dir, feature_provider=None, display_progress=True):
    run_dir = pathlib.Path(run_dir)
    manifest = config.load_manifest()
    feature_provider = feature_provider or make_embedder(config.embedder_id)
    model = train(manifest, _train_config(config), feature_provider,
                  label_mode=config.params.get('label_mode', 'negative'), display_progress=display_progress)
    paths = {'model': save_model(model, run_dir / 'model.parh')}
    history = history_frame(model)
    history.to_csv(run_dir / 'train-history.csv', index=False)
    paths['history'] = run_dir / 'train-history.csv'
    if len(split_by(manifest, 'val')):
        report = evaluate(model, manifest, 'val', feature_provider)
        paths['ma_report'] = save_report(report, run_dir / 'ma-report.json')
        logger.info("Validation mA: %.2f", report.mean_ma)
    return paths


def run_eval(config, run_dir, feature_provider=None):
    run_dir = pathlib.Path(run_dir)
    manifest = config.load_manifest()
    model = load_model(config.params['model'])
    feature_provider = feature_provider or make_embedder(model.backbone_id)
    report = evaluate(model, manifest, config.params.get('split', 'test'), feature_provider)
    logger.info("mA on %s: %.2f", config.params.get('split', 'test'), report.mean_ma)
    paths = {'ma_report': save_report(report, run_dir / 'ma-report.json')}
    paths['renderings'] = emit_report(report, {'table', 'csv'}, run_dir)
    return paths


def run_report(config, run_dir):
    """Compare two mA reports, or re-render a single study or mA report."""
    reports = [load_any_report(p) for p in config.params['reports']]
    if len(reports) == 2:
        table = compare_reports(*reports)
        logger.info("mean mA %.2f -> %.2f (delta %+.2f)", table.mean_ma_a, table.mean_ma_b, table.mean_delta)
        return {'renderings': emit_report(table, FORMATS, run_dir)}
    if len(reports) == 1:
        return {'renderings': emit_report(reports[0], FORMATS, run_dir)}
    raise ValueError("report takes one or two report files, got {}".format(len(reports)))


RUNNERS = {
    'expand': run_expand,
    'train': run_train,
    'eval': run_eval,
    'report': run_report,
}
