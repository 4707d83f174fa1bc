# -*- coding: utf-8 -*-
"""
Generation quality (Frechet distance between feature sets) and recognition quality (label-based mean accuracy).
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from logic.dataset import random_subset

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-6
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray
    embedder_id: str

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be an n x d matrix, got shape {}".format(features.shape))
        if not np.isfinite(features).all():
            raise ValueError("features of {} contain non-finite values".format(self.embedder_id))
        object.__setattr__(self, 'features', features)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class FIDResult:
    value: float
    n_a: int
    n_b: int
    embedder_id: str
    epsilon_used: float

    def to_record(self):
        return {'kind': 'fid', 'value': self.value, 'n_a': self.n_a, 'n_b': self.n_b,
                'embedder_id': self.embedder_id, 'epsilon_used': self.epsilon_used}


@dataclass(frozen=True)
class AttributeMA:
    tpr: float
    tnr: float
    ma: float


@dataclass
class MAReport:
    per_attribute: Dict[str, AttributeMA]
    mean_ma: float
    skipped: List[str] = field(default_factory=list)
    # attribute order of the scored matrix
    attributes: Tuple[str, ...] = ()

    def to_record(self):
        return {
            'kind': 'ma',
            'mean_ma': self.mean_ma,
            'per_attribute': {a: {'tpr': m.tpr, 'tnr': m.tnr, 'ma': m.ma} for a, m in self.per_attribute.items()},
            'skipped': list(self.skipped),
            'attributes': list(self.attributes),
        }

    @classmethod
    def from_record(cls, record):
        per_attribute = {a: AttributeMA(m['tpr'], m['tnr'], m['ma']) for a, m in record['per_attribute'].items()}
        return cls(per_attribute, record['mean_ma'], list(record.get('skipped', [])),
                   tuple(record.get('attributes', per_attribute)))


def embed_images(embedder, images):
    if not images:
        raise ValueError("cannot embed an empty image list")
    return FeatureSet(embedder.embed(list(images)), embedder.embedder_id)


def _sqrt_psd(matrix):
    values, vectors = linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0, None))) @ vectors.T


def compute_fid(a, b, epsilon=DEFAULT_EPSILON):
    """
    Frechet distance between Gaussian fits of two feature sets:
    |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with epsilon * I added to both covariances.
    The trace of the product root is taken from the eigenvalues of the symmetric S_a^(1/2) S_b S_a^(1/2).
    """
    if a.embedder_id != b.embedder_id:
        raise ValueError("feature sets come from different embedders: {} and {}".format(a.embedder_id,
                                                                                        b.embedder_id))
    if a.d != b.d:
        raise ValueError("feature dimensions differ: {} and {}".format(a.d, b.d))
    if a.n < 2 or b.n < 2:
        raise ValueError("FID needs at least 2 rows per set, got {} and {}".format(a.n, b.n))

    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    offset = np.eye(a.d) * epsilon
    sigma_a = np.atleast_2d(np.cov(a.features, rowvar=False)) + offset
    sigma_b = np.atleast_2d(np.cov(b.features, rowvar=False)) + offset

    root_a = _sqrt_psd(sigma_a)
    product = root_a @ sigma_b @ root_a
    product = (product + product.T) / 2
    eigenvalues = linalg.eigvalsh(product)
    tr_covmean = np.sqrt(np.clip(eigenvalues, 0, None)).sum()

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2 * tr_covmean)
    if not np.isfinite(value):
        raise ArithmeticError("FID is not finite after stabilisation (epsilon={})".format(epsilon))
    tolerance = 1e-6 * max(1.0, float(np.trace(sigma_a) + np.trace(sigma_b)))
    if value < -tolerance:
        logger.warning("FID of %.3g is below the numerical tolerance %.3g", value, -tolerance)
    return FIDResult(max(value, 0.0), a.n, b.n, a.embedder_id, epsilon)


def reference_subset_fid(manifest, embedder, n, seed, features=None, epsilon=DEFAULT_EPSILON):
    """
    FID between a seeded random n-subset of a dataset and the whole dataset: the floor generated sets are compared
    against.
    @param features: optional precomputed features of all manifest samples, in manifest order
    """
    if n > len(manifest):
        raise ValueError("cannot draw {} samples from a manifest with {}".format(n, len(manifest)))
    if features is None:
        features = embedder.embed_samples(manifest, manifest.samples)
    position = {sid: i for i, sid in enumerate(manifest.sample_ids())}
    chosen = [position[s.sample_id] for s in random_subset(manifest, n, seed).samples]
    full = FeatureSet(features, embedder.embedder_id)
    return compute_fid(FeatureSet(full.features[chosen], embedder.embedder_id), full, epsilon)


def compute_ma(predictions, labels, threshold=DEFAULT_THRESHOLD, attributes=None):
    """
    Label-based mean accuracy.
    @param predictions: n x m scores; a score above the threshold is a positive prediction
    @param labels: n x m binary ground truth
    @param threshold: binarisation threshold
    @param attributes: names of the m columns. Default is their index.
    @return: MAReport; attributes without positives or without negatives in the labels are skipped
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 2:
        raise ValueError("predictions {} and labels {} must be matrices of the same shape".format(
            predictions.shape, labels.shape))
    attributes = tuple(attributes) if attributes is not None else tuple(str(i) for i in range(labels.shape[1]))
    if len(attributes) != labels.shape[1]:
        raise ValueError("{} attribute names for {} columns".format(len(attributes), labels.shape[1]))

    predicted = predictions > threshold
    actual = labels == 1
    per_attribute, skipped = {}, []
    for i, attribute in enumerate(attributes):
        positives = int(actual[:, i].sum())
        negatives = int((~actual[:, i]).sum())
        if positives == 0 or negatives == 0:
            skipped.append(attribute)
            continue
        tpr = int((predicted[:, i] & actual[:, i]).sum()) / positives
        tnr = int((~predicted[:, i] & ~actual[:, i]).sum()) / negatives
        per_attribute[attribute] = AttributeMA(tpr, tnr, 100 * (tpr + tnr) / 2)
    if skipped:
        logger.info("mA skips %d attribute(s) without positives or negatives: %s", len(skipped), ", ".join(skipped))
    mean_ma = sum(m.ma for m in per_attribute.values()) / len(per_attribute) if per_attribute else 0.0
    return MAReport(per_attribute, mean_ma, skipped, attributes)


def ma_table(report, column='mA'):
    """Two-column table (attribute, mA) in scoring order."""
    rows = [(a, report.per_attribute[a].ma) for a in report.attributes if a in report.per_attribute]
    return pd.DataFrame(rows, columns=['attribute', column])


def save_report(report, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_record(), f, indent=4, ensure_ascii=False)
    return path


def load_report(path):
    with open(path, encoding='utf-8') as f:
        record = json.load(f)
    kind = record.get('kind')
    if kind == 'ma':
        return MAReport.from_record(record)
    if kind == 'fid':
        return FIDResult(record['value'], record['n_a'], record['n_b'], record['embedder_id'],
                         record['epsilon_used'])
    raise ValueError("{} is not a metric report (kind={!r})".format(path, kind))
