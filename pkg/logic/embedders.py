# -*- coding: utf-8 -*-
"""
Feature extractors. Embedders map images to feature rows; they serve both the FID computation and, as frozen
backbones, the attribute classifier.
"""
import logging

import numpy as np
from PIL import Image
from tqdm import tqdm

from logic.conditioning import as_image, load_image
from logic.errors import EmbeddingError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Embedder:
    """
    Parent class for feature extractors.
    """
    embedder_id = None
    dim = None
    batch_size = 32

    def embed(self, images):
        """
        @param images: list of H x W x 3 uint8 images
        @return: len(images) x dim float matrix, one row per image in order
        """
        raise NotImplementedError("Embedder subclass must implement 'embed' method.")

    def embed_samples(self, manifest, samples, input_size=None, display_progress=False):
        """
        Features of manifest samples, loaded from disk in batches.
        @param input_size: optional (height, width) every image is resized to first
        """
        samples = list(samples)
        rows = []
        batches = range(0, len(samples), self.batch_size)
        for start in tqdm(batches, desc='Embedding', disable=not display_progress):
            images = [load_image(manifest.image_file(s)) for s in samples[start:start + self.batch_size]]
            if input_size is not None:
                images = [resize_to(image, input_size) for image in images]
            rows.append(self.embed(images))
        if not rows:
            return np.zeros((0, self.dim))
        return np.concatenate(rows, axis=0)


def resize_to(image, size):
    height, width = size
    if image.shape[:2] == (height, width):
        return image
    return np.array(Image.fromarray(as_image(image)).resize((width, height), resample=Image.Resampling.BILINEAR))


class MockEmbedder(Embedder):
    """
    16 image statistics: channel means and variances (scaled to [0, 1]) and a 10-bin luminance histogram.
    """
    embedder_id = 'mock'
    dim = 16
    bins = 10

    def embed(self, images):
        rows = []
        for image in images:
            pixels = as_image(image).reshape(-1, 3).astype(np.float64) / 255.0
            luminance = pixels @ np.array([0.299, 0.587, 0.114])
            histogram, _ = np.histogram(luminance, bins=self.bins, range=(0.0, 1.0))
            rows.append(np.concatenate([pixels.mean(axis=0), pixels.var(axis=0), histogram / len(luminance)]))
        return np.array(rows, dtype=np.float64).reshape(len(rows), self.dim)


class ArrayEmbedder(Embedder):
    """
    Serves precomputed features looked up by sample id. It holds no model, so it only works through embed_samples;
    raw images cannot be embedded.
    """
    embedder_id = 'array'

    def __init__(self, features, embedder_id='array'):
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in features.items()}
        self.embedder_id = embedder_id
        self.dim = len(next(iter(self.features.values()))) if self.features else 0

    def embed(self, images):
        raise EmbeddingError("embedder {} only looks up cached features by sample id (embed_samples), it cannot embed "
                             "{} raw image(s)".format(self.embedder_id, len(images)))

    def embed_samples(self, manifest, samples, input_size=None, display_progress=False):
        try:
            rows = [self.features[s.sample_id] for s in samples]
        except KeyError as e:
            raise KeyError("no cached features for sample {}".format(e)) from None
        return np.array(rows).reshape(len(rows), self.dim)


class _TorchvisionEmbedder(Embedder):
    input_size = None

    def __init__(self, device=None):
        try:
            import torch
        except ImportError as e:
            raise RuntimeError("embedder {} needs torch and torchvision ({})".format(self.embedder_id, e)) from None
        self.torch = torch
        self.device = device or ('cuda' if torch.cuda.is_available() else 'cpu')
        self.model = self._build().to(self.device).eval()

    def _build(self):
        raise NotImplementedError("_TorchvisionEmbedder subclass must implement '_build' method.")

    def _tensor(self, images):
        torch = self.torch
        height, width = self.input_size
        batch = np.stack([resize_to(as_image(i), (height, width)) for i in images]).astype(np.float32) / 255.0
        batch = (batch - np.array(IMAGENET_MEAN, dtype=np.float32)) / np.array(IMAGENET_STD, dtype=np.float32)
        return torch.from_numpy(batch).permute(0, 3, 1, 2).to(self.device)

    def embed(self, images):
        with self.torch.no_grad():
            return self.model(self._tensor(images)).cpu().numpy().astype(np.float64)


class InceptionEmbedder(_TorchvisionEmbedder):
    """2048-d pool3 activations of the ImageNet Inception v3."""
    embedder_id = 'inception-v3-pool3'
    dim = 2048
    input_size = (299, 299)

    def _build(self):
        from torchvision.models import Inception_V3_Weights, inception_v3
        model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        model.fc = self.torch.nn.Identity()
        return model


class TorchvisionBackbone(_TorchvisionEmbedder):
    """ResNet50 pooled features at 256x192, the attribute classifier's backbone."""
    embedder_id = 'resnet50'
    dim = 2048
    input_size = (256, 192)

    def _build(self):
        from torchvision.models import ResNet50_Weights, resnet50
        model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V2)
        model.fc = self.torch.nn.Identity()
        return model

    def tensors(self, images):
        return self._tensor(images)

    def load_backbone_state(self, state):
        self.model.load_state_dict(state)
        self.model.to(self.device).eval()


EMBEDDER_MAPPING = {
    'mock': MockEmbedder,
    'inception-v3-pool3': InceptionEmbedder,
    'resnet50': TorchvisionBackbone,
}


def make_embedder(embedder_id, **kwargs):
    if embedder_id not in EMBEDDER_MAPPING:
        raise ValueError("unknown embedder '{}' (available: {})".format(embedder_id, ", ".join(EMBEDDER_MAPPING)))
    return EMBEDDER_MAPPING[embedder_id](**kwargs)
