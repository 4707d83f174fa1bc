# -*- coding: utf-8 -*-
"""
Generation configurations, the techniques applied on top of plain img2img (textual inversion tokens, dynamic strength,
latent alteration) and the generate call that ties a backend, a conditioning image and a prompt together.
"""
import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

from logic.conditioning import as_image, image_size, load_image
from logic.dataset import canonicalize, random_subset, subset_by_attribute, tokenize
from logic.errors import GenerationError

logger = logging.getLogger(__name__)

# name -> (strength, scale)
NAMED_CONFIGS = {
    'HiSt_HiSc': (0.6, 15.0),
    'HiSt_LoSc': (0.6, 3.0),
    'LoSt_LoSc': (0.2, 3.0),
}
DEFAULT_STEPS = 50
TECHNIQUES = ('plain', 'textual_inversion', 'dynamic_strength', 'latent_alteration')
DEFAULT_STRENGTH_RANGE = (0.2, 0.8)
DEFAULT_LATENT_AMPLITUDE = 0.1
TOKEN_PREFIX = 'pedattr'


@dataclass(frozen=True)
class GenerationConfig:
    strength: float
    scale: float
    steps: int = DEFAULT_STEPS
    seed: int = 0
    granularity: int = 8
    name: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.strength <= 1:
            raise ValueError("strength must lie in [0, 1], got {}".format(self.strength))
        if self.scale < 0:
            raise ValueError("scale must be non-negative, got {}".format(self.scale))
        if self.steps < 1:
            raise ValueError("steps must be at least 1, got {}".format(self.steps))
        if self.granularity < 1:
            raise ValueError("granularity must be positive, got {}".format(self.granularity))

    def to_record(self):
        return {'name': self.name, 'strength': self.strength, 'scale': self.scale, 'steps': self.steps,
                'seed': self.seed, 'granularity': self.granularity}


def named_config(name, granularity=8, steps=DEFAULT_STEPS, seed=0):
    if name not in NAMED_CONFIGS:
        raise ValueError("unknown configuration '{}' (expected one of {})".format(name, ", ".join(NAMED_CONFIGS)))
    strength, scale = NAMED_CONFIGS[name]
    return GenerationConfig(strength=strength, scale=scale, steps=steps, seed=seed, granularity=granularity, name=name)


@dataclass(frozen=True)
class TokenEntry:
    token: str
    phrase: str
    handle: list
    subset_size: int


@dataclass(frozen=True)
class TokenLibrary:
    tokens: Dict[str, TokenEntry] = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)
    # attribute -> reason it has no token
    errors: Dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.tokens)

    def to_record(self):
        return {
            'tokens': {a: {'token': e.token, 'phrase': e.phrase, 'handle': e.handle, 'subset_size': e.subset_size}
                       for a, e in self.tokens.items()},
            'metadata': self.metadata,
            'errors': self.errors,
        }

    @classmethod
    def from_record(cls, record):
        tokens = {a: TokenEntry(e['token'], e['phrase'], list(e['handle']), int(e['subset_size']))
                  for a, e in record.get('tokens', {}).items()}
        return cls(tokens, dict(record.get('metadata', {})), dict(record.get('errors', {})))


def save_token_library(library, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(library.to_record(), f, indent=4, ensure_ascii=False)
    return path


def load_token_library(path):
    with open(path, encoding='utf-8') as f:
        return TokenLibrary.from_record(json.load(f))


@dataclass(frozen=True)
class TechniqueSpec:
    kind: str = 'plain'
    # TokenLibrary for textual_inversion; None asks the expansion to train one
    library: Optional[TokenLibrary] = None
    s_min: float = DEFAULT_STRENGTH_RANGE[0]
    s_max: float = DEFAULT_STRENGTH_RANGE[1]
    amplitude: float = DEFAULT_LATENT_AMPLITUDE

    def __post_init__(self):
        if self.kind not in TECHNIQUES:
            raise ValueError("unknown technique '{}' (expected one of {})".format(self.kind, ", ".join(TECHNIQUES)))
        if not 0 <= self.s_min <= self.s_max <= 1:
            raise ValueError("strength range must satisfy 0 <= s_min <= s_max <= 1, got ({}, {})".format(
                self.s_min, self.s_max))
        if self.amplitude < 0:
            raise ValueError("latent noise amplitude must be non-negative, got {}".format(self.amplitude))
        if self.library is not None and self.kind != 'textual_inversion':
            raise ValueError("only textual_inversion takes a token library")

    def to_record(self):
        record = {'kind': self.kind}
        if self.kind == 'textual_inversion':
            record['tokens'] = len(self.library) if self.library is not None else None
        elif self.kind == 'dynamic_strength':
            record.update(s_min=self.s_min, s_max=self.s_max)
        elif self.kind == 'latent_alteration':
            record['amplitude'] = self.amplitude
        return record


def parse_technique(text):
    """
    Parse `plain`, `textual_inversion`, `dynamic_strength[:s_min,s_max]` or `latent_alteration[:amplitude]`.
    """
    kind, _, params = text.strip().partition(':')
    try:
        if kind == 'dynamic_strength' and params:
            s_min, s_max = (float(v) for v in params.split(','))
            return TechniqueSpec(kind, s_min=s_min, s_max=s_max)
        if kind == 'latent_alteration' and params:
            return TechniqueSpec(kind, amplitude=float(params))
    except ValueError as e:
        raise ValueError("invalid technique '{}': {}".format(text, e)) from None
    if params:
        raise ValueError("technique '{}' takes no parameters".format(kind))
    return TechniqueSpec(kind)


@dataclass
class GenerationResult:
    image: object
    metadata: Dict


def compute_dynamic_strength(similarity, s_min=DEFAULT_STRENGTH_RANGE[0], s_max=DEFAULT_STRENGTH_RANGE[1]):
    """
    Strength for one image: the more the image already matches the prompt, the less it is altered.
    @return: s_min + (1 - similarity) * (s_max - s_min)
    """
    if not 0 <= s_min <= s_max <= 1:
        raise ValueError("strength range must satisfy 0 <= s_min <= s_max <= 1, got ({}, {})".format(s_min, s_max))
    if not 0 <= similarity <= 1:
        raise ValueError("similarity must lie in [0, 1], got {}".format(similarity))
    return s_min + (1 - similarity) * (s_max - s_min)


def token_for(attribute):
    return "<{}-{}>".format(TOKEN_PREFIX, canonicalize(attribute))


def _phrase_pattern(text):
    return re.compile(r"(?<![\w-]){}(?![\w-])".format(re.escape(text)))


def apply_tokens(prompt, library):
    """Replace the phrase of every prompt attribute that has a learned token by the token; attributes are kept."""
    text = prompt.text
    entries = [library.tokens[a] for a in prompt.attributes if a in library.tokens]
    for entry in sorted(entries, key=lambda e: (-len(e.phrase), e.phrase)):
        text = _phrase_pattern(entry.phrase).sub(entry.token, text)
    return replace(prompt, text=text)


def revert_tokens(prompt, library):
    text = prompt.text
    for entry in library.tokens.values():
        text = text.replace(entry.token, entry.phrase)
    return replace(prompt, text=text)


def train_attribute_tokens(backend, manifest, schema, attribute_list, steps, seed, max_images=None):
    """
    Learn one textual inversion token per attribute from the images positive for it.
    @param backend: a backend supporting token training
    @param manifest: the dataset the images come from
    @param schema: the schema of the manifest
    @param attribute_list: attributes to learn tokens for
    @param steps: training steps per token
    @param seed: run seed
    @param max_images: optional cap on the images used per attribute (a seeded random subset)
    @return: a TokenLibrary; attributes without positive images are listed in its errors and get no token
    """
    if not backend.supports_token_training:
        raise GenerationError("backend {} cannot learn textual inversion tokens".format(backend.backend_id))
    vocabulary = {t for phrase in schema.phrases.values() for t in tokenize(phrase)}
    vocabulary.update(canonicalize(a) for a in schema.attributes)
    tokens, errors = {}, {}
    for attribute in attribute_list:
        subset = subset_by_attribute(manifest, attribute, positive=True)
        if len(subset) == 0:
            errors[attribute] = "no positive samples"
            logger.warning("No token for %s: no positive samples", attribute)
            continue
        if max_images is not None and len(subset) > max_images:
            subset = random_subset(subset, max_images, seed)
        token = token_for(attribute)
        if any(t in vocabulary for t in tokenize(token)):
            raise GenerationError("token {} collides with the schema vocabulary".format(token))
        images = [load_image(manifest.image_file(s)) for s in subset.samples]
        phrase = schema.phrases[attribute]
        try:
            handle = backend.train_token(images, phrase, token, steps, seed)
        except GenerationError as e:
            errors[attribute] = str(e)
            logger.warning("No token for %s: %s", attribute, e)
            continue
        tokens[attribute] = TokenEntry(token, phrase, handle, len(subset))
    metadata = {'backend': backend.backend_id, 'steps': steps, 'seed': seed,
                'subset_sizes': {a: e.subset_size for a, e in tokens.items()}}
    logger.info("Learned %d token(s), %d attribute(s) skipped", len(tokens), len(errors))
    return TokenLibrary(tokens, metadata, errors)


def generate(backend, init, prompt, config, technique=None):
    """
    Generate one image from a conditioning image and a prompt.
    @param backend: the Backend to use
    @param init: conditioning image whose sides are multiples of the backend granularity
    @param prompt: the PromptRecord
    @param config: the GenerationConfig
    @param technique: the TechniqueSpec. Default is plain img2img.
    @return: GenerationResult with the image (same size as init) and the run metadata
    """
    technique = technique or TechniqueSpec()
    init = as_image(init)
    width, height = image_size(init)
    granularity = max(backend.granularity, config.granularity)
    if width % granularity or height % granularity:
        raise GenerationError("init image {}x{} is not a multiple of granularity {}".format(width, height, granularity))

    text = prompt.text
    strength = config.strength
    latent_noise = 0.0
    metadata = {'backend': backend.backend_id, 'config': config.name, 'technique': technique.to_record()}
    try:
        if technique.kind == 'textual_inversion':
            if technique.library is None:
                raise GenerationError("textual_inversion needs a token library")
            for entry in technique.library.tokens.values():
                if getattr(backend, 'tokens', {}).get(entry.token) != entry.handle:
                    backend.register_token(entry.token, entry.handle)
            text = apply_tokens(prompt, technique.library).text
        elif technique.kind == 'dynamic_strength':
            similarity = backend.image_text_similarity(init, prompt.text)
            strength = compute_dynamic_strength(similarity, technique.s_min, technique.s_max)
            metadata['similarity'] = round(float(similarity), 6)
        elif technique.kind == 'latent_alteration':
            latent_noise = technique.amplitude
        image = backend.generate(init, text, strength, config.scale, config.steps, config.seed,
                                 latent_noise=latent_noise)
    except GenerationError:
        raise
    except Exception as e:
        raise GenerationError("backend {} failed on prompt '{}': {}".format(backend.backend_id, text, e)) from e
    image = as_image(image)
    if image.shape != init.shape:
        raise GenerationError("backend {} returned {}x{} for a {}x{} input".format(
            backend.backend_id, image.shape[1], image.shape[0], width, height))
    metadata.update(prompt=text, effective_strength=round(float(strength), 6), scale=config.scale,
                    steps=config.steps, seed=config.seed)
    return GenerationResult(image, metadata)


