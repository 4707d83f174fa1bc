# -*- coding: utf-8 -*-
"""
Multi-label pedestrian attribute classifier: a linear head over backbone features, trained with binary cross-entropy,
SGD with momentum, a warm-up phase and a reduce-on-plateau schedule driven by validation mA.

With a frozen backbone (the default) training is logistic regression over cached features. End-to-end fine-tuning is
available with the torchvision backbone only.
"""
import json
import logging
import pathlib
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from logic.dataset import split_by
from logic.errors import TrainingError
from logic.metrics import DEFAULT_THRESHOLD, compute_ma

logger = logging.getLogger(__name__)

MODEL_MAGIC = b'PARH'
LABEL_MODES = ('negative', 'mask')


@dataclass(frozen=True)
class TrainConfig:
    backbone_id: str = 'resnet50'
    freeze_backbone: bool = True
    optimizer: str = 'sgd'
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lr: float = 0.01
    # rates of the backbone (lr_fr) and the head (lr_new); None falls back to lr
    lr_fr: Optional[float] = None
    lr_new: Optional[float] = None
    warmup_coef: float = 0.1
    warmup_epochs: int = 1
    scheduler: str = 'plateau'
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    early_stop_patience: int = 10
    loss: str = 'bce'
    input_size: Tuple[int, int] = (256, 192)
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    standardize: bool = True

    def __post_init__(self):
        if self.lr <= 0 or any(r is not None and r <= 0 for r in (self.lr_fr, self.lr_new)):
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1, got {}".format(self.epochs))
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1, got {}".format(self.batch_size))
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ValueError("input_size must be a positive (height, width), got {}".format(self.input_size))
        if self.optimizer != 'sgd' or self.scheduler != 'plateau' or self.loss != 'bce':
            raise ValueError("only sgd with a plateau scheduler and bce loss are supported")

    @property
    def head_lr(self):
        return self.lr_new if self.lr_new is not None else self.lr

    @property
    def backbone_lr(self):
        return self.lr_fr if self.lr_fr is not None else self.lr

    def to_record(self):
        record = asdict(self)
        record['input_size'] = list(self.input_size)
        return record


@dataclass
class TrainedModel:
    backbone_id: str
    weights: np.ndarray
    bias: np.ndarray
    schema_fingerprint: str
    attributes: Tuple[str, ...]
    metadata: Dict = field(default_factory=dict)
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    # fine-tuned backbone weights (a torch state_dict); None when the backbone stayed frozen
    backbone_state: Optional[Dict] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.attributes):
            raise ValueError("head has shape {} for {} attributes".format(self.weights.shape, len(self.attributes)))
        if self.bias.shape != (len(self.attributes),):
            raise ValueError("bias has shape {} for {} attributes".format(self.bias.shape, len(self.attributes)))
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("head weights must be finite")

    def normalize(self, features):
        features = np.asarray(features, dtype=np.float64)
        if self.feature_mean is None:
            return features
        return (features - self.feature_mean) / self.feature_std

    def predict(self, features):
        """Sigmoid scores, one row per feature row."""
        return _sigmoid(self.normalize(features) @ self.weights.T + self.bias)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))


def _bce(scores, labels, mask):
    scores = np.clip(scores, 1e-12, 1 - 1e-12)
    losses = -(labels * np.log(scores) + (1 - labels) * np.log(1 - scores))
    return float((losses * mask).sum() / max(mask.sum(), 1.0))


def label_matrix(manifest, samples, label_mode='negative'):
    """
    Labels and loss mask of samples. In mask mode, only the attributes listed in a sample's labeled_attributes count.
    """
    if label_mode not in LABEL_MODES:
        raise ValueError("unknown label mode '{}' (expected one of {})".format(label_mode, ", ".join(LABEL_MODES)))
    schema = manifest.schema
    labels = np.array([s.attributes.values for s in samples], dtype=np.float64).reshape(len(samples), len(schema))
    mask = np.ones_like(labels)
    if label_mode == 'mask':
        for row, sample in enumerate(samples):
            if sample.labeled_attributes is not None:
                mask[row] = 0
                for attribute in sample.labeled_attributes:
                    mask[row, schema.index(attribute)] = 1
    return labels, mask


def train(manifest, config, feature_provider, label_mode='negative', display_progress=False):
    """
    Train the attribute head.
    @param manifest: dataset with a train split; a val split, when present, drives the scheduler and model selection
    @param config: the TrainConfig
    @param feature_provider: an embedder-like object with embed_samples(manifest, samples, input_size)
    @param label_mode: negative (labels taken as given) or mask (only labeled_attributes count in the loss)
    @param display_progress: show a progress bar over epochs
    @return: the TrainedModel with the best validation mA; history in metadata['history']
    """
    train_set = split_by(manifest, 'train')
    if len(train_set) == 0:
        raise TrainingError("manifest has no train samples")
    if not config.freeze_backbone:
        return _fine_tune(manifest, config, feature_provider, label_mode, display_progress)
    val_set = split_by(manifest, 'val')
    monitor = val_set if len(val_set) else train_set
    schema = manifest.schema

    features = feature_provider.embed_samples(manifest, train_set.samples, input_size=config.input_size)
    labels, mask = label_matrix(manifest, train_set.samples, label_mode)
    if monitor is train_set:
        monitor_features, monitor_labels = features, labels
    else:
        monitor_features = feature_provider.embed_samples(manifest, monitor.samples, input_size=config.input_size)
        monitor_labels, _ = label_matrix(manifest, monitor.samples)

    feature_mean = feature_std = None
    if config.standardize:
        feature_mean = features.mean(axis=0)
        feature_std = np.where(features.std(axis=0) > 1e-12, features.std(axis=0), 1.0)
    model = TrainedModel(feature_provider.embedder_id, np.zeros((len(schema), features.shape[1])),
                         np.zeros(len(schema)), schema.fingerprint(), schema.attributes,
                         feature_mean=feature_mean, feature_std=feature_std)
    x = model.normalize(features)
    x_monitor = model.normalize(monitor_features)

    rng = np.random.default_rng(seed=config.seed)
    weights = rng.normal(0.0, 0.01, size=model.weights.shape)
    bias = np.zeros(len(schema))
    velocity_w, velocity_b = np.zeros_like(weights), np.zeros_like(bias)
    lr = config.head_lr
    best = (-1.0, weights.copy(), bias.copy(), 0)
    since_improvement = since_reduction = 0
    history = []

    for epoch in tqdm(range(config.epochs), desc='Training', disable=not display_progress):
        epoch_lr = lr * config.warmup_coef if epoch < config.warmup_epochs else lr
        order = rng.permutation(len(x))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            scores = _sigmoid(x[batch] @ weights.T + bias)
            error = (scores - labels[batch]) * mask[batch] / max(mask[batch].sum(), 1.0)
            grad_w = error.T @ x[batch] + config.weight_decay * weights
            grad_b = error.sum(axis=0)
            velocity_w = config.momentum * velocity_w + grad_w
            velocity_b = config.momentum * velocity_b + grad_b
            weights = weights - epoch_lr * velocity_w
            bias = bias - epoch_lr * velocity_b

        loss = _bce(_sigmoid(x @ weights.T + bias), labels, mask)
        if not np.isfinite(loss):
            raise TrainingError("loss is not finite at epoch {} (lr={}, |W|={:.3g})".format(
                epoch + 1, epoch_lr, float(np.linalg.norm(weights))))
        monitor_ma = compute_ma(_sigmoid(x_monitor @ weights.T + bias), monitor_labels, config.threshold,
                                schema.attributes).mean_ma
        history.append({'epoch': epoch + 1, 'loss': loss, 'val_ma': monitor_ma, 'lr': epoch_lr})
        logger.debug("epoch %d: loss %.5f, mA %.2f, lr %g", epoch + 1, loss, monitor_ma, epoch_lr)

        if monitor_ma > best[0]:
            best = (monitor_ma, weights.copy(), bias.copy(), epoch + 1)
            since_improvement = since_reduction = 0
        else:
            since_improvement += 1
            since_reduction += 1
            if epoch >= config.warmup_epochs and since_reduction >= config.plateau_patience:
                lr *= config.plateau_factor
                since_reduction = 0
                logger.debug("mA stalled for %d epochs, lr reduced to %g", config.plateau_patience, lr)
            if since_improvement >= config.early_stop_patience:
                logger.info("Early stop at epoch %d (best mA %.2f at epoch %d)", epoch + 1, best[0], best[3])
                break

    model.weights, model.bias = best[1], best[2]
    model.metadata = {'config': config.to_record(), 'label_mode': label_mode, 'best_epoch': best[3],
                      'best_val_ma': best[0], 'monitor_split': 'val' if monitor is val_set else 'train',
                      'n_train': len(train_set), 'history': history}
    return model


def _fine_tune(manifest, config, backbone, label_mode, display_progress):
    """
    End-to-end training of backbone and head. The backbone is left at, and the model keeps, the weights of the best
    epoch; the head ends up in the model's weight block.
    """
    from logic.embedders import TorchvisionBackbone
    from logic.conditioning import load_image

    if not isinstance(backbone, TorchvisionBackbone):
        raise TrainingError("fine-tuning needs the torchvision backbone, got {}".format(backbone.embedder_id))
    torch = backbone.torch
    torch.manual_seed(config.seed)
    schema = manifest.schema
    train_set = split_by(manifest, 'train')
    val_set = split_by(manifest, 'val')
    monitor = val_set if len(val_set) else train_set
    labels, mask = label_matrix(manifest, train_set.samples, label_mode)
    monitor_labels, _ = label_matrix(manifest, monitor.samples)

    head = torch.nn.Linear(backbone.dim, len(schema)).to(backbone.device)
    network = torch.nn.Sequential(backbone.model, head)
    optimizer = torch.optim.SGD([
        {'params': backbone.model.parameters(), 'lr': config.backbone_lr},
        {'params': head.parameters(), 'lr': config.head_lr},
    ], momentum=config.momentum, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(optimizer, mode='max', factor=config.plateau_factor,
                                                           patience=config.plateau_patience)
    criterion = torch.nn.BCEWithLogitsLoss(reduction='none')
    base_lrs = [g['lr'] for g in optimizer.param_groups]

    def batches(samples, order):
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            yield idx, backbone.tensors([load_image(manifest.image_file(samples[i])) for i in idx])

    def scores_of(samples):
        network.eval()
        rows = []
        with torch.no_grad():
            for _, tensor in batches(samples, np.arange(len(samples))):
                rows.append(torch.sigmoid(network(tensor)).cpu().numpy())
        return np.concatenate(rows)

    rng = np.random.default_rng(seed=config.seed)
    history, best, since_improvement = [], (-1.0, None, 0), 0
    for epoch in tqdm(range(config.epochs), desc='Fine-tuning', disable=not display_progress):
        for group, base in zip(optimizer.param_groups, base_lrs):
            if epoch < config.warmup_epochs:
                group['lr'] = base * config.warmup_coef
            elif epoch == config.warmup_epochs:
                group['lr'] = base
        network.train()
        total, count = 0.0, 0
        for idx, tensor in batches(train_set.samples, rng.permutation(len(train_set))):
            target = torch.from_numpy(labels[idx]).float().to(backbone.device)
            weight = torch.from_numpy(mask[idx]).float().to(backbone.device)
            loss = (criterion(network(tensor), target) * weight).sum() / weight.sum().clamp(min=1.0)
            if not torch.isfinite(loss):
                raise TrainingError("loss is not finite at epoch {}".format(epoch + 1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
            count += len(idx)
        monitor_ma = compute_ma(scores_of(monitor.samples), monitor_labels, config.threshold,
                                schema.attributes).mean_ma
        scheduler.step(monitor_ma)
        history.append({'epoch': epoch + 1, 'loss': total / max(count, 1), 'val_ma': monitor_ma,
                        'lr': optimizer.param_groups[1]['lr']})
        if monitor_ma > best[0]:
            state = (head.weight.detach().cpu().numpy().copy(), head.bias.detach().cpu().numpy().copy(),
                     {k: v.detach().cpu().clone() for k, v in backbone.model.state_dict().items()})
            best, since_improvement = (monitor_ma, state, epoch + 1), 0
        else:
            since_improvement += 1
            if since_improvement >= config.early_stop_patience:
                break
    weights, bias, backbone_state = best[1]
    backbone.load_backbone_state(backbone_state)
    return TrainedModel(backbone.embedder_id, weights, bias, schema.fingerprint(), schema.attributes,
                        metadata={'config': config.to_record(), 'label_mode': label_mode, 'best_epoch': best[2],
                                  'best_val_ma': best[0], 'fine_tuned': True, 'history': history},
                        backbone_state=backbone_state)


def _check_compatible(model, manifest):
    if model.schema_fingerprint != manifest.schema.fingerprint():
        raise ValueError("model was trained for schema {} but the manifest's schema {} has fingerprint {}".format(
            model.schema_fingerprint, manifest.schema.dataset_id, manifest.schema.fingerprint()))


def evaluate(model, manifest, split, feature_provider, threshold=None):
    """
    mA of a model on one split of a manifest. Neither the model nor the manifest is modified; a fine-tuned model
    loads its backbone weights into the feature provider first.
    """
    if split not in ('val', 'test'):
        raise ValueError("evaluation split must be val or test, got '{}'".format(split))
    _check_compatible(model, manifest)
    subset = split_by(manifest, split)
    if len(subset) == 0:
        raise TrainingError("manifest has no '{}' samples to evaluate".format(split))
    if model.backbone_state is not None:
        if not hasattr(feature_provider, 'load_backbone_state'):
            raise TrainingError("model carries fine-tuned backbone weights that {} cannot load".format(
                feature_provider.embedder_id))
        feature_provider.load_backbone_state(model.backbone_state)
    input_size = tuple(model.metadata.get('config', {}).get('input_size', (256, 192)))
    features = feature_provider.embed_samples(manifest, subset.samples, input_size=input_size)
    labels, _ = label_matrix(manifest, subset.samples)
    if threshold is None:
        threshold = model.metadata.get('config', {}).get('threshold', DEFAULT_THRESHOLD)
    return compute_ma(model.predict(features), labels, threshold, model.attributes)


@dataclass
class ComparisonTable:
    rows: pd.DataFrame
    mean_ma_a: float
    mean_ma_b: float
    mean_delta: float


def compare_reports(a, b):
    """
    Per-attribute mA of two reports side by side, sorted by delta (b - a) descending. Aggregates are taken over
    attributes scored in both reports.
    """
    attributes_a = set(a.attributes) or set(a.per_attribute) | set(a.skipped)
    attributes_b = set(b.attributes) or set(b.per_attribute) | set(b.skipped)
    if attributes_a != attributes_b:
        raise ValueError("reports cover different attributes: {}".format(
            ", ".join(sorted(attributes_a ^ attributes_b))))
    order = a.attributes or tuple(sorted(attributes_a))
    shared = [x for x in order if x in a.per_attribute and x in b.per_attribute]
    rows = pd.DataFrame(
        [(x, a.per_attribute[x].ma, b.per_attribute[x].ma, b.per_attribute[x].ma - a.per_attribute[x].ma)
         for x in shared],
        columns=['attribute', 'ma_a', 'ma_b', 'delta'])
    rows = rows.sort_values('delta', ascending=False, kind='mergesort').reset_index(drop=True)
    if shared:
        mean_a = float(rows['ma_a'].mean())
        mean_b = float(rows['ma_b'].mean())
        mean_delta = float(rows['delta'].mean())
    else:
        mean_a = mean_b = mean_delta = 0.0
    return ComparisonTable(rows, mean_a, mean_b, mean_delta)


def save_model(model, path):
    """
    Model artifact: magic, little-endian uint32 header length, JSON header, then little-endian float32 blocks
    (weights row-major, bias, and the feature mean and std when the model standardises its input). A fine-tuned
    backbone is saved next to the artifact, as a torch state_dict in a .pt file named in the header.
    """
    path = pathlib.Path(path)
    m, d = model.weights.shape
    header = {
        'schema_fingerprint': model.schema_fingerprint,
        'backbone_id': model.backbone_id,
        'attributes': list(model.attributes),
        'shape': [m, d],
        'standardized': model.feature_mean is not None,
        'metadata': model.metadata,
    }
    if model.backbone_state is not None:
        import torch
        backbone_file = path.with_suffix('.pt')
        torch.save(model.backbone_state, backbone_file)
        header['backbone_file'] = backbone_file.name
    header_bytes = json.dumps(header, ensure_ascii=False).encode('utf-8')
    blocks = [model.weights.reshape(-1), model.bias]
    if model.feature_mean is not None:
        blocks += [model.feature_mean, model.feature_std]
    with open(path, 'wb') as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack('<I', len(header_bytes)))
        f.write(header_bytes)
        for block in blocks:
            f.write(np.asarray(block, dtype='<f4').tobytes())
    return path


def load_model(path):
    path = pathlib.Path(path)
    with open(path, 'rb') as f:
        if f.read(4) != MODEL_MAGIC:
            raise ValueError("{} is not a model artifact".format(path))
        (header_length,) = struct.unpack('<I', f.read(4))
        header = json.loads(f.read(header_length).decode('utf-8'))
        payload = np.frombuffer(f.read(), dtype='<f4').astype(np.float64)
    m, d = header['shape']
    expected = m * d + m + (2 * d if header['standardized'] else 0)
    if payload.size != expected:
        raise ValueError("{} holds {} weights, expected {}".format(path, payload.size, expected))
    weights, bias = payload[:m * d].reshape(m, d), payload[m * d:m * d + m]
    mean = std = None
    if header['standardized']:
        mean, std = payload[m * d + m:m * d + m + d], payload[m * d + m + d:]
    backbone_state = None
    if header.get('backbone_file'):
        import torch
        backbone_state = torch.load(path.parent / header['backbone_file'], map_location='cpu')
    return TrainedModel(header['backbone_id'], weights, bias, header['schema_fingerprint'],
                        tuple(header['attributes']), header['metadata'], mean, std, backbone_state)


def history_frame(model):
    return pd.DataFrame(model.metadata.get('history', []), columns=['epoch', 'loss', 'val_ma', 'lr'])
