# -*- coding: utf-8 -*-
"""
Dataset expansion: every real training sample conditions the generation of synthetic samples whose prompt is built
from its own annotations and whose labels are the attributes stated by that prompt.
"""
import json
import logging
import os
import pathlib
from dataclasses import dataclass, field, replace
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional

from sortedcontainers import SortedList
from tqdm import tqdm

import logic.helper as hlp
from logic.backends import derive_seed
from logic.conditioning import fit_to_granularity, load_image, save_image
from logic.dataset import (AttributeVector, DatasetManifest, PedestrianSample, merge_manifests, save_manifest,
                           split_by)
from logic.errors import ConditioningError, GenerationError, PromptError
from logic.generation import (DEFAULT_STEPS, NAMED_CONFIGS, TechniqueSpec, generate, named_config,
                              save_token_library, train_attribute_tokens)
from logic.grammars import covered_attributes, load_grammar
from logic.metrics import FeatureSet, compute_fid
from logic.partrainer import LABEL_MODES
from logic.prompts import build_attribute_prompt

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = 'HiSt_HiSc'
DEFAULT_TOKEN_STEPS = 100
SYNTHETIC_DIR = 'synthetic'


@dataclass(frozen=True)
class ExpansionPlan:
    source: DatasetManifest
    output_dir: pathlib.Path
    config_name: str = DEFAULT_CONFIG
    technique: TechniqueSpec = TechniqueSpec('textual_inversion')
    # grammar id, path or Grammar; None picks the built-in grammar of the source dataset
    grammar: Optional[object] = None
    multiplier: int = 1
    seed: int = 0
    label_mode: str = 'negative'
    steps: int = DEFAULT_STEPS
    token_steps: int = DEFAULT_TOKEN_STEPS
    token_max_images: Optional[int] = None

    def __post_init__(self):
        if self.multiplier < 1:
            raise ValueError("multiplier must be at least 1, got {}".format(self.multiplier))
        if self.config_name not in NAMED_CONFIGS:
            raise ValueError("unknown configuration '{}' (expected one of {})".format(
                self.config_name, ", ".join(NAMED_CONFIGS)))
        if self.label_mode not in LABEL_MODES:
            raise ValueError("unknown label mode '{}' (expected one of {})".format(
                self.label_mode, ", ".join(LABEL_MODES)))
        if not any(s.split == 'train' for s in self.source.samples):
            raise ValueError("source manifest has no train samples to expand")
        object.__setattr__(self, 'output_dir', pathlib.Path(self.output_dir))

    @property
    def grammar_id(self):
        return self.grammar if self.grammar is not None else self.source.schema.dataset_id


@dataclass
class ExpansionResult:
    merged: DatasetManifest
    per_sample_log: List[Dict] = field(default_factory=list)
    failures: List[Dict] = field(default_factory=list)
    summary: Dict = field(default_factory=dict)


@dataclass
class _Outcome:
    source_id: str
    k: int
    sample: Optional[PedestrianSample] = None
    log: Optional[Dict] = None
    failure: Optional[Dict] = None


def assign_labels(prompt, schema):
    """Binary vector with ones exactly at the prompt's attributes."""
    unknown = sorted(a for a in prompt.attributes if a not in schema)
    if unknown:
        raise PromptError("prompt states attributes missing from schema {}: {}".format(
            schema.dataset_id, ", ".join(unknown)))
    return AttributeVector.from_names(schema, prompt.attributes)


def synthetic_id(source_id, k):
    return "{}-syn{}".format(source_id, k)


def _train_tokens(plan, backend, grammar, train_set):
    schema = train_set.schema
    covered = covered_attributes(grammar, schema)
    attributes = [a for a in schema.attributes if a in covered]
    library = train_attribute_tokens(backend, train_set, schema, attributes, plan.token_steps, plan.seed,
                                     max_images=plan.token_max_images)
    save_token_library(library, plan.output_dir / 'token-library.json')
    return replace(plan.technique, library=library)


def _expand_one(job, plan, backend, grammar, technique, labeled):
    sample, k = job
    source = plan.source
    schema = source.schema
    sid = synthetic_id(sample.sample_id, k)
    try:
        prompt = build_attribute_prompt(sample, schema, grammar)
        init = fit_to_granularity(load_image(source.image_file(sample)), backend.granularity)
        config = named_config(plan.config_name, granularity=backend.granularity, steps=plan.steps,
                              seed=derive_seed(plan.seed, sample.sample_id, k))
        result = generate(backend, init, prompt, config, technique)
        image_file = plan.output_dir / SYNTHETIC_DIR / "{}.png".format(sid)
        save_image(result.image, image_file)
    except (GenerationError, ConditioningError, PromptError, OSError) as e:
        logger.warning("Generation for %s failed: %s", sample.sample_id, e)
        failure = {'source_id': sample.sample_id, 'synthetic_id': sid, 'error': "{}: {}".format(type(e).__name__, e)}
        return _Outcome(sample.sample_id, k, failure=failure)

    synthetic = PedestrianSample(
        sample_id=sid,
        image_path=image_file.relative_to(plan.output_dir).as_posix(),
        attributes=assign_labels(prompt, schema),
        split='train',
        source='synthetic',
        prompt=prompt.text,
        gen_config_name=plan.config_name,
        labeled_attributes=labeled,
    )
    log = {'source_id': sample.sample_id, 'synthetic_id': sid, 'prompt': prompt.text,
           'attributes': sorted(prompt.attributes), 'generation': result.metadata}
    return _Outcome(sample.sample_id, k, synthetic, log)


def _rebase(manifest, directory):
    """The manifest with every image path rewritten relative to directory, which becomes its base."""
    samples = [replace(s, image_path=pathlib.Path(os.path.relpath(manifest.image_file(s), directory)).as_posix())
               for s in manifest.samples]
    metadata = {k: v for k, v in manifest.metadata.items() if k != 'image_root'}
    return replace(manifest, samples=tuple(samples), metadata=metadata, base_dir=pathlib.Path(directory))


def expand_dataset(plan, backend, embedder=None, display_progress=True):
    """
    Generate plan.multiplier synthetic samples per real training sample and merge them with the source.
    @param plan: the ExpansionPlan
    @param backend: the generation Backend
    @param embedder: optional Embedder; when given, the FID between the synthetic and the real training images is
        computed and stored in the summary
    @param display_progress: show a progress bar over samples
    @return: ExpansionResult. Per-sample failures are recorded, not raised.
    """
    source = plan.source
    schema = source.schema
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    (plan.output_dir / SYNTHETIC_DIR).mkdir(exist_ok=True)
    grammar = load_grammar(plan.grammar_id)
    train_set = split_by(source, 'train')

    technique = plan.technique
    if technique.kind == 'textual_inversion' and technique.library is None:
        technique = _train_tokens(plan, backend, grammar, train_set)
    if technique.kind == 'textual_inversion':
        for entry in technique.library.tokens.values():
            backend.register_token(entry.token, entry.handle)
    labeled = None
    if plan.label_mode == 'mask':
        covered = covered_attributes(grammar, schema)
        labeled = tuple(a for a in schema.attributes if a in covered)

    jobs = [(sample, k) for sample in train_set.samples for k in range(plan.multiplier)]
    outcomes = SortedList(key=lambda o: (o.source_id, o.k))

    def run(job):
        return _expand_one(job, plan, backend, grammar, technique, labeled)

    workers = max(1, min(backend.max_concurrency, len(jobs)))
    logger.info("Expanding %d samples x %d with %s (%s), %d worker(s)", len(train_set), plan.multiplier,
                plan.config_name, technique.kind, workers)
    with tqdm(total=len(jobs), desc='Expanding', disable=not display_progress) as pbar:
        if workers == 1:
            for job in jobs:
                outcomes.add(run(job))
                pbar.update()
        else:
            with ThreadPool(workers) as pool:
                for outcome in pool.imap_unordered(run, jobs):
                    outcomes.add(outcome)
                    pbar.update()

    synthetic = [o.sample for o in outcomes if o.sample is not None]
    per_sample_log = [o.log for o in outcomes if o.log is not None]
    failures = [o.failure for o in outcomes if o.failure is not None]
    metadata = {
        'expansion': {'config_name': plan.config_name, 'technique': technique.to_record(),
                      'grammar': grammar.grammar_id, 'multiplier': plan.multiplier, 'seed': plan.seed,
                      'label_mode': plan.label_mode, 'backend': backend.backend_id},
    }
    merged = merge_manifests(_rebase(source, plan.output_dir), source.with_samples(synthetic), metadata=metadata)

    summary = dict(metadata['expansion'])
    summary.update(n_real_train=len(train_set), n_synthetic=len(synthetic), n_failures=len(failures))
    if embedder is not None and len(synthetic) >= 2 and len(train_set) >= 2:
        fid = compute_fid(FeatureSet(embedder.embed_samples(merged, synthetic), embedder.embedder_id),
                          FeatureSet(embedder.embed_samples(source, train_set.samples), embedder.embedder_id))
        summary['post_expansion_fid'] = fid.to_record()
        logger.info("Post-expansion FID (synthetic vs real train): %.2f", fid.value)
    if failures:
        logger.warning("%d of %d generations failed, see failures.jsonl", len(failures), len(jobs))

    save_manifest(merged, plan.output_dir / 'manifest.jsonl')
    _write_lines(per_sample_log, plan.output_dir / 'per-sample-log.jsonl')
    _write_lines(failures, plan.output_dir / 'failures.jsonl')
    hlp.export_json_file(summary, plan.output_dir / 'expansion-summary.json')
    return ExpansionResult(merged, per_sample_log, failures, summary)


def _write_lines(records, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + '\n')
