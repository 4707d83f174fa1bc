# -*- coding: utf-8 -*-
"""
Data model shared by every other module: attribute schemas, pedestrian samples and the line-delimited manifest
files that hold real and synthetic datasets. Manifests are immutable; every operation returns a new one.
"""
import hashlib
import json
import logging
import pathlib
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image

from logic.errors import ManifestError, SchemaError

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
SOURCES = ('real', 'synthetic')

_TOKEN_PATTERN = re.compile(r"[a-z0-9]+(?:[-_][a-z0-9]+)*")


def tokenize(text):
    """
    Split text into lowercase matching tokens. Hyphens and underscores inside a word are dropped, so "shoes-Leather"
    becomes the single token "shoesleather" and "t-shirt" becomes "tshirt".
    """
    return tuple(re.sub(r"[-_]", "", token) for token in _TOKEN_PATTERN.findall(text.lower()))


def canonicalize(text):
    return "".join(tokenize(text))


@dataclass(frozen=True)
class Category:
    name: str
    attributes: Tuple[str, ...]
    exclusive: bool = False


class AttributeSchema:
    """
    Attribute categories, canonical attribute names and the phrase used for each attribute in prompts.
    Besides its phrase, every attribute is also matched by its own (canonicalised) name.
    """

    def __init__(self, dataset_id, categories, phrases, description=''):
        self.dataset_id = dataset_id
        self.categories = tuple(
            c if isinstance(c, Category) else Category(c[0], tuple(c[1]), bool(c[2]) if len(c) > 2 else False)
            for c in categories
        )
        self.phrases = dict(phrases)
        self.description = description
        self.attributes = tuple(a for c in self.categories for a in c.attributes)
        self._index = {}
        self._category_of = {}
        for category in self.categories:
            for attribute in category.attributes:
                if attribute in self._index:
                    raise SchemaError("attribute '{}' appears more than once in schema {}".format(
                        attribute, dataset_id))
                self._index[attribute] = len(self._index)
                self._category_of[attribute] = category
        missing = [a for a in self.attributes if not self.phrases.get(a)]
        if missing:
            raise SchemaError("attributes without phrase in schema {}: {}".format(dataset_id, ", ".join(missing)))
        unknown = [a for a in self.phrases if a not in self._index]
        if unknown:
            raise SchemaError("phrases for unknown attributes in schema {}: {}".format(dataset_id, ", ".join(unknown)))
        self.matchers = self._build_matchers()
        lengths = sorted({len(tokens) for tokens in self.matchers}, reverse=True)
        self._matchers_by_length = [
            (n, {tokens: a for tokens, a in self.matchers.items() if len(tokens) == n}) for n in lengths
        ]

    def _build_matchers(self):
        matchers = {}
        canonical_owner = {}
        for attribute in self.attributes:
            for form in (self.phrases[attribute], attribute):
                tokens = tokenize(form)
                if not tokens:
                    raise SchemaError("phrase of '{}' has no matchable words".format(attribute))
                key = "".join(tokens)
                owner = canonical_owner.setdefault(key, attribute)
                if owner != attribute:
                    raise SchemaError("'{}' is ambiguous in schema {}: matches both {} and {}".format(
                        form, self.dataset_id, owner, attribute))
                matchers[tokens] = attribute
        return matchers

    def __len__(self):
        return len(self.attributes)

    def __contains__(self, attribute):
        return attribute in self._index

    def __eq__(self, other):
        return isinstance(other, AttributeSchema) and self.to_record() == other.to_record()

    def __hash__(self):
        return hash(self.dataset_id)

    def __repr__(self):
        return "AttributeSchema({!r}, {} attributes)".format(self.dataset_id, len(self))

    def index(self, attribute):
        try:
            return self._index[attribute]
        except KeyError:
            raise SchemaError("unknown attribute '{}' for schema {}".format(attribute, self.dataset_id)) from None

    def category_of(self, attribute):
        self.index(attribute)
        return self._category_of[attribute]

    def category(self, name):
        for category in self.categories:
            if category.name == name:
                return category
        raise SchemaError("unknown category '{}' for schema {}".format(name, self.dataset_id))

    def lookup_phrase(self, text):
        """Attribute whose phrase (or name) equals the given text after canonicalisation, or None."""
        return self.matchers.get(tokenize(text))

    def find_attributes(self, text):
        """
        Attributes whose phrase (or name) occurs in the text as a whole-token span. Longer phrases are matched first
        and a matched span cannot be reused, so "short skirt" never also yields "skirt".
        """
        tokens = tokenize(text)
        taken = [False] * len(tokens)
        found = set()
        for length, table in self._matchers_by_length:
            for start in range(len(tokens) - length + 1):
                attribute = table.get(tokens[start:start + length])
                if attribute is not None and not any(taken[start:start + length]):
                    taken[start:start + length] = [True] * length
                    found.add(attribute)
        return frozenset(found)

    def fingerprint(self):
        payload = json.dumps([self.dataset_id, [[c.name, list(c.attributes), c.exclusive] for c in self.categories]])
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]

    def to_record(self):
        return {
            'dataset_id': self.dataset_id,
            'description': self.description,
            'categories': [
                {'name': c.name, 'attributes': list(c.attributes), 'exclusive': c.exclusive} for c in self.categories
            ],
            'phrases': {a: self.phrases[a] for a in self.attributes},
        }

    @classmethod
    def from_record(cls, record):
        try:
            categories = [Category(c['name'], tuple(c['attributes']), bool(c.get('exclusive', False)))
                          for c in record['categories']]
            return cls(record['dataset_id'], categories, record['phrases'], record.get('description', ''))
        except KeyError as e:
            raise SchemaError("schema record lacks field {}".format(e)) from None


@dataclass(frozen=True)
class AttributeVector:
    values: Tuple[int, ...]

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def positives(self, schema):
        return frozenset(a for a, v in zip(schema.attributes, self.values) if v)

    @classmethod
    def from_names(cls, schema, names):
        values = [0] * len(schema)
        for name in names:
            values[schema.index(name)] = 1
        return cls(tuple(values))

    @classmethod
    def zeros(cls, schema):
        return cls((0,) * len(schema))


@dataclass(frozen=True)
class PedestrianSample:
    sample_id: str
    image_path: str
    attributes: AttributeVector
    split: str = 'train'
    source: str = 'real'
    bbox: Optional[Tuple[int, int, int, int]] = None
    prompt: Optional[str] = None
    gen_config_name: Optional[str] = None
    caption: Optional[str] = None
    labeled_attributes: Optional[Tuple[str, ...]] = None

    def to_record(self):
        record = {
            'record': 'sample',
            'sample_id': self.sample_id,
            'image_path': self.image_path,
            'attributes': list(self.attributes.values),
            'split': self.split,
            'source': self.source,
            'bbox': list(self.bbox) if self.bbox is not None else None,
            'prompt': self.prompt,
            'gen_config_name': self.gen_config_name,
        }
        if self.caption is not None:
            record['caption'] = self.caption
        if self.labeled_attributes is not None:
            record['labeled_attributes'] = list(self.labeled_attributes)
        return record

    @classmethod
    def from_record(cls, record):
        bbox = record.get('bbox')
        labeled = record.get('labeled_attributes')
        return cls(
            sample_id=str(record['sample_id']),
            image_path=record['image_path'],
            attributes=AttributeVector(tuple(int(v) for v in record['attributes'])),
            split=record.get('split', 'train'),
            source=record.get('source', 'real'),
            bbox=tuple(int(v) for v in bbox) if bbox is not None else None,
            prompt=record.get('prompt'),
            gen_config_name=record.get('gen_config_name'),
            caption=record.get('caption'),
            labeled_attributes=tuple(labeled) if labeled is not None else None,
        )


@dataclass(frozen=True)
class DatasetManifest:
    schema: AttributeSchema
    samples: Tuple[PedestrianSample, ...]
    metadata: Dict = field(default_factory=dict, hash=False)
    # directory that image paths are relative to; not part of the manifest contents
    base_dir: Optional[pathlib.Path] = field(default=None, compare=False, hash=False)

    def __len__(self):
        return len(self.samples)

    def with_samples(self, samples):
        return replace(self, samples=tuple(samples))

    def sample_ids(self):
        return [s.sample_id for s in self.samples]

    def get(self, sample_id):
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        raise KeyError(sample_id)

    def image_file(self, sample):
        root = self.base_dir if self.base_dir is not None else pathlib.Path.cwd()
        return pathlib.Path(root) / sample.image_path


def load_manifest(path, base_dir=None):
    """
    Read a manifest file: a schema record on the first line followed by one sample record per line.
    @param path: path of the manifest file
    @param base_dir: directory that image paths are resolved against. Default is the manifest's directory.
    @return: a DatasetManifest satisfying all invariants
    """
    path = pathlib.Path(path)
    schema = None
    metadata = {}
    samples = []
    seen = {}
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError("malformed record ({})".format(e.msg), line=line_number) from None
            if not isinstance(record, dict):
                raise ManifestError("record is not an object", line=line_number)
            if schema is None:
                if record.get('record') != 'schema':
                    raise ManifestError("first record must be the schema record", line=line_number)
                try:
                    schema = AttributeSchema.from_record(record)
                except SchemaError as e:
                    raise ManifestError(str(e), line=line_number) from None
                metadata = dict(record.get('metadata') or {})
                continue
            try:
                sample = PedestrianSample.from_record(record)
            except (KeyError, TypeError, ValueError) as e:
                raise ManifestError("invalid sample record ({})".format(e), line=line_number) from None
            if sample.sample_id in seen:
                raise ManifestError("duplicate sample_id '{}' (first seen on line {})".format(
                    sample.sample_id, seen[sample.sample_id]), line=line_number)
            if len(sample.attributes) != len(schema):
                raise ManifestError("sample '{}' has {} attribute values, schema {} has {}".format(
                    sample.sample_id, len(sample.attributes), schema.dataset_id, len(schema)), line=line_number)
            seen[sample.sample_id] = line_number
            samples.append(sample)
    if schema is None:
        raise ManifestError("manifest {} has no schema record".format(path))
    if base_dir is None:
        # image_root, when recorded, is relative to the manifest file
        base_dir = path.parent / metadata['image_root'] if metadata.get('image_root') else path.parent
    manifest = DatasetManifest(schema=schema, samples=tuple(samples), metadata=metadata,
                               base_dir=pathlib.Path(base_dir))
    violations = validate_manifest(manifest, image_sizes=read_image_sizes(manifest))
    if violations:
        raise ManifestError("{} invariant violation(s): {}".format(len(violations), "; ".join(violations[:5])))
    logger.debug("Loaded %d samples from %s", len(samples), path)
    return manifest


def save_manifest(manifest, path):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {'record': 'schema'}
    header.update(manifest.schema.to_record())
    header['metadata'] = manifest.metadata
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(header, ensure_ascii=False) + '\n')
        for sample in manifest.samples:
            f.write(json.dumps(sample.to_record(), ensure_ascii=False) + '\n')
    return path


def read_image_sizes(manifest):
    """
    (width, height) of the images of samples that carry a bounding box, read from the image headers. Images that do not
    exist (yet) are left out.
    """
    sizes = {}
    for sample in manifest.samples:
        if sample.bbox is None:
            continue
        path = manifest.image_file(sample)
        if not path.is_file():
            logger.debug("No image at %s, bbox of %s not checked", path, sample.sample_id)
            continue
        with Image.open(path) as image:
            sizes[sample.sample_id] = image.size
    return sizes


def validate_manifest(manifest, image_sizes=None):
    """
    Check every type invariant of a manifest.
    @param manifest: the manifest to check
    @param image_sizes: optional mapping sample_id -> (width, height) used to check bounding boxes against the image
    @return: list of violation descriptions, each naming the sample and the rule; empty iff the manifest is valid
    """
    schema = manifest.schema
    violations = []
    seen = set()
    for sample in manifest.samples:
        sid = sample.sample_id
        if sid in seen:
            violations.append("{}: duplicate sample_id".format(sid))
        seen.add(sid)
        if len(sample.attributes) != len(schema):
            violations.append("{}: vector length {} != schema length {}".format(sid, len(sample.attributes),
                                                                               len(schema)))
            continue
        if any(v not in (0, 1) for v in sample.attributes.values):
            violations.append("{}: attribute values must be binary".format(sid))
        for category in schema.categories:
            if category.exclusive:
                active = [a for a in category.attributes if sample.attributes[schema.index(a)]]
                if len(active) > 1:
                    violations.append("{}: exclusive category '{}' has several values set ({})".format(
                        sid, category.name, ", ".join(active)))
        if sample.split not in SPLITS:
            violations.append("{}: unknown split '{}'".format(sid, sample.split))
        if sample.source not in SOURCES:
            violations.append("{}: unknown source '{}'".format(sid, sample.source))
        if sample.source == 'synthetic':
            if not sample.prompt:
                violations.append("{}: synthetic requires prompt".format(sid))
            if not sample.gen_config_name:
                violations.append("{}: synthetic requires gen_config_name".format(sid))
        elif sample.prompt is not None or sample.gen_config_name is not None:
            violations.append("{}: real sample must not carry prompt or gen_config_name".format(sid))
        if sample.labeled_attributes is not None:
            unknown = [a for a in sample.labeled_attributes if a not in schema]
            if unknown:
                violations.append("{}: labeled_attributes not in schema ({})".format(sid, ", ".join(unknown)))
        if sample.bbox is not None:
            x, y, w, h = sample.bbox
            if x < 0 or y < 0 or w <= 0 or h <= 0:
                violations.append("{}: bbox {} must have non-negative origin and positive size".format(
                    sid, sample.bbox))
            elif image_sizes is not None and sid in image_sizes:
                width, height = image_sizes[sid]
                if x + w > width or y + h > height:
                    violations.append("{}: bbox {} exceeds image bounds {}x{}".format(sid, sample.bbox, width, height))
    return violations


def subset_by_attribute(manifest, attribute, positive=True):
    i = manifest.schema.index(attribute)
    wanted = 1 if positive else 0
    return manifest.with_samples(s for s in manifest.samples if s.attributes[i] == wanted)


def random_subset(manifest, n, seed):
    """
    Pick n distinct samples. The selection is a pure function of the manifest contents, n and seed.
    """
    total = len(manifest.samples)
    if n > total:
        raise ValueError("cannot draw {} samples from a manifest with {}".format(n, total))
    if n < 0:
        raise ValueError("invalid subset size: {}".format(n))
    rng = np.random.default_rng(seed=int(seed))
    chosen = rng.choice(total, size=n, replace=False)
    return manifest.with_samples(manifest.samples[i] for i in chosen)


def split_by(manifest, split):
    if split not in SPLITS:
        raise ValueError("unknown split '{}'".format(split))
    return manifest.with_samples(s for s in manifest.samples if s.split == split)


def merge_manifests(first, second, metadata=None):
    if first.schema != second.schema:
        raise ManifestError("cannot merge manifests of schemas {} and {}".format(
            first.schema.dataset_id, second.schema.dataset_id))
    ids = set(first.sample_ids())
    clashes = [sid for sid in second.sample_ids() if sid in ids]
    if clashes:
        raise ManifestError("duplicate sample_id '{}' in merge".format(clashes[0]))
    merged_metadata = dict(first.metadata)
    merged_metadata.update(metadata or {})
    return replace(first, samples=first.samples + second.samples, metadata=merged_metadata)
