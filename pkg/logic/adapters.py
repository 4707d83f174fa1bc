# -*- coding: utf-8 -*-
"""
Ingestion adapters that turn user-supplied annotation files into manifests. No data is downloaded here.
"""
import json
import logging
import pathlib

import pandas as pd

from logic.dataset import AttributeVector, DatasetManifest, PedestrianSample, read_image_sizes, validate_manifest
from logic.errors import ManifestError

logger = logging.getLogger(__name__)

BBOX_COLUMNS = ('x', 'y', 'w', 'h')


def from_annotation_csv(path, schema, image_column='image', split_column='split', id_column=None,
                        default_split='train'):
    """
    Build a manifest from a CSV table with one row per image and one 0/1 column per schema attribute.
    @param path: the CSV file
    @param schema: the AttributeSchema the columns refer to
    @param image_column: column holding the image path (relative to the CSV's directory)
    @param split_column: column holding train/val/test; rows without it get default_split
    @param id_column: column holding sample ids. Default derives ids from the image file name.
    @param default_split: split used when the table has no split column
    @return: a validated DatasetManifest
    """
    path = pathlib.Path(path)
    table = pd.read_csv(path, dtype={image_column: str})
    missing = [a for a in schema.attributes if a not in table.columns]
    if image_column not in table.columns:
        missing.insert(0, image_column)
    if missing:
        raise ManifestError("{} lacks columns: {}".format(path, ", ".join(missing)))
    has_bbox = all(c in table.columns for c in BBOX_COLUMNS)

    samples = []
    for row_number, row in enumerate(table.to_dict('records'), start=2):
        values = []
        for attribute in schema.attributes:
            value = row[attribute]
            if pd.isna(value) or value not in (0, 1):
                raise ManifestError("column '{}' must be 0 or 1, got {!r}".format(attribute, value), line=row_number)
            values.append(int(value))
        image_path = row[image_column]
        sample_id = str(row[id_column]) if id_column else pathlib.PurePath(image_path).stem
        bbox = None
        if has_bbox and not any(pd.isna(row[c]) for c in BBOX_COLUMNS):
            bbox = tuple(int(row[c]) for c in BBOX_COLUMNS)
        split = row[split_column] if split_column in table.columns else default_split
        samples.append(PedestrianSample(sample_id=sample_id, image_path=image_path,
                                        attributes=AttributeVector(tuple(values)), split=split, bbox=bbox))
    return _checked(DatasetManifest(schema=schema, samples=tuple(samples), metadata={'adapter': 'annotation-csv'},
                                    base_dir=path.parent))


def from_mals_captions(path, schema, split='train', annotations=None):
    """
    Build a manifest of real samples carrying raw captions. Caption fields are not mapped to attributes: vectors stay
    empty unless an annotations mapping (sample id -> list of attribute names) is given.
    """
    path = pathlib.Path(path)
    with open(path, encoding='utf-8') as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise ManifestError("{} must hold a list of {{image, caption}} records".format(path))
    annotations = annotations or {}
    samples = []
    for i, record in enumerate(records):
        try:
            image_path = record['image']
            caption = record['caption']
        except (KeyError, TypeError):
            raise ManifestError("record {} lacks 'image' or 'caption'".format(i)) from None
        sample_id = str(record.get('id', pathlib.PurePath(image_path).stem))
        names = annotations.get(sample_id, ())
        samples.append(PedestrianSample(sample_id=sample_id, image_path=image_path,
                                        attributes=AttributeVector.from_names(schema, names), split=split,
                                        caption=caption))
    logger.info("Read %d captioned samples from %s (%d annotated)", len(samples), path,
                sum(1 for s in samples if s.sample_id in annotations))
    return _checked(DatasetManifest(schema=schema, samples=tuple(samples), metadata={'adapter': 'mals-captions'},
                                    base_dir=path.parent))


def _checked(manifest):
    violations = validate_manifest(manifest, image_sizes=read_image_sizes(manifest))
    if violations:
        raise ManifestError("{} invariant violation(s): {}".format(len(violations), "; ".join(violations[:5])))
    return manifest
