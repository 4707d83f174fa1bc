# -*- coding: utf-8 -*-
"""
Transforms applied to conditioning images before generation: blur, surrounding context, resolution and aspect ratio.
Images are H x W x 3 uint8 numpy arrays; every transform returns a new array.
"""
import logging
import math
import pathlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from logic.errors import ConditioningError

logger = logging.getLogger(__name__)

# level -> (kernel size, sigma per axis)
BLUR_LEVELS = {
    'none': None,
    'low': (5, 5.0),
    'medium': (15, 25.0),
    'high': (25, 50.0),
}
CONTEXT_FRACTIONS = (0.10, 0.25, 0.50, 1.00)
RESOLUTION_FACTORS = (0.50, 0.25)
ASPECT_MODES = {'square': (1, 1), 'wide': (2, 1), 'tall': (1, 2)}
CONDITIONING_KINDS = ('identity', 'blur', 'context', 'resolution', 'aspect')
DEFAULT_GRANULARITY = 8


def as_image(pixels):
    """Coerce an array to the H x W x 3 uint8 layout (grey images are replicated, alpha is dropped)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = np.stack([pixels] * 3, axis=-1)
    if pixels.ndim != 3 or pixels.shape[2] not in (3, 4):
        raise ConditioningError("expected an H x W x 3 image, got shape {}".format(pixels.shape))
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ConditioningError("empty image")
    return np.ascontiguousarray(np.clip(pixels[..., :3], 0, 255).astype(np.uint8))


def image_size(image):
    """(width, height) of an image."""
    return image.shape[1], image.shape[0]


def load_image(path):
    with Image.open(path) as img:
        return as_image(np.array(img.convert('RGB')))


def save_image(image, path):
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(as_image(image)).save(path)
    return path


def gaussian_kernel(size, sigma):
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2
    weights = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    return weights / weights.sum()


def apply_blur(image, level):
    """
    Separable Gaussian blur with edge replication at the borders.
    @param image: the image to blur
    @param level: one of none, low (5x5, sigma 5), medium (15x15, sigma 25), high (25x25, sigma 50)
    @return: blurred image of the same size
    """
    if level not in BLUR_LEVELS:
        raise ConditioningError("unknown blur level '{}' (expected one of {})".format(level, ", ".join(BLUR_LEVELS)))
    image = as_image(image)
    if BLUR_LEVELS[level] is None:
        return image.copy()
    size, sigma = BLUR_LEVELS[level]
    kernel = gaussian_kernel(size, sigma)
    blurred = image.astype(np.float64)
    for axis in (0, 1):
        blurred = ndimage.correlate1d(blurred, kernel, axis=axis, mode='nearest')
    return np.clip(np.rint(blurred), 0, 255).astype(np.uint8)


def context_window(image_shape, bbox, fraction):
    """
    Crop rectangle (x, y, w, h) around a bounding box: each side of the box moves towards the image border by
    `fraction` of the margin available on that side (rounded down).
    """
    height, width = image_shape[:2]
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ConditioningError("degenerate bbox {}".format(tuple(bbox)))
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise ConditioningError("bbox {} lies outside the {}x{} image".format(tuple(bbox), width, height))
    if not 0 <= fraction <= 1:
        raise ConditioningError("context fraction must lie in [0, 1], got {}".format(fraction))
    left = x - math.floor(x * fraction)
    top = y - math.floor(y * fraction)
    right = x + w + math.floor((width - x - w) * fraction)
    bottom = y + h + math.floor((height - y - h) * fraction)
    return left, top, right - left, bottom - top


def crop_context(image, bbox, fraction):
    image = as_image(image)
    x, y, w, h = context_window(image.shape, bbox, fraction)
    return image[y:y + h, x:x + w].copy()


def _resize(image, width, height):
    return np.array(Image.fromarray(image).resize((width, height), resample=Image.Resampling.BILINEAR))


def downscale(image, factor, granularity=DEFAULT_GRANULARITY):
    """
    Bilinear resize by `factor`, each side then rounded down to a multiple of `granularity`.
    """
    if not 0 < factor <= 1:
        raise ConditioningError("scale factor must lie in (0, 1], got {}".format(factor))
    image = as_image(image)
    width, height = image_size(image)
    new_width = math.floor(width * factor + 1e-9)
    new_height = math.floor(height * factor + 1e-9)
    if new_width < granularity or new_height < granularity:
        raise ConditioningError("downscaling {}x{} by {} gives {}x{}, below granularity {}".format(
            width, height, factor, new_width, new_height, granularity))
    new_width -= new_width % granularity
    new_height -= new_height % granularity
    return _resize(image, new_width, new_height)


def _snap(value, granularity):
    return max(granularity, int(math.floor(value / granularity + 0.5)) * granularity)


def aspect_size(width, height, mode, granularity=DEFAULT_GRANULARITY):
    """Target (width, height) with the mode's ratio and about the same pixel count."""
    if mode not in ASPECT_MODES:
        raise ConditioningError("unknown aspect mode '{}' (expected one of {})".format(mode, ", ".join(ASPECT_MODES)))
    ratio_w, ratio_h = ASPECT_MODES[mode]
    if width * ratio_h == height * ratio_w:
        return width, height
    unit = _snap(math.sqrt(width * height / (ratio_w * ratio_h)), granularity)
    return unit * ratio_w, unit * ratio_h


def reshape_aspect(image, mode, granularity=DEFAULT_GRANULARITY):
    image = as_image(image)
    width, height = image_size(image)
    target = aspect_size(width, height, mode, granularity)
    if target == (width, height):
        return image.copy()
    return _resize(image, *target)


@dataclass(frozen=True)
class ConditioningSpec:
    kind: str
    value: Optional[Union[str, float]] = None

    def __str__(self):
        if self.kind == 'identity':
            return 'identity'
        return "{}:{}".format(self.kind, self.value)


def parse_conditioning_spec(text):
    """
    Parse strings such as `blur:medium`, `context:0.25`, `resolution:0.5`, `aspect:square` or `identity`.
    """
    kind, _, value = text.strip().partition(':')
    if kind not in CONDITIONING_KINDS:
        raise ConditioningError("unknown conditioning kind in '{}' (expected one of {})".format(
            text, ", ".join(CONDITIONING_KINDS)))
    if kind == 'identity':
        if value:
            raise ConditioningError("identity takes no parameter: '{}'".format(text))
        return ConditioningSpec('identity')
    if kind == 'blur':
        if value not in BLUR_LEVELS:
            raise ConditioningError("unknown blur level in '{}'".format(text))
        return ConditioningSpec(kind, value)
    if kind == 'aspect':
        if value not in ASPECT_MODES:
            raise ConditioningError("unknown aspect mode in '{}'".format(text))
        return ConditioningSpec(kind, value)
    try:
        number = float(value)
    except ValueError:
        raise ConditioningError("'{}' needs a number, got '{}'".format(kind, value)) from None
    if not 0 < number <= 1:
        raise ConditioningError("'{}' value must lie in (0, 1], got {}".format(kind, number))
    return ConditioningSpec(kind, number)


def apply_conditioning(image, spec, bbox=None, granularity=DEFAULT_GRANULARITY):
    if isinstance(spec, str):
        spec = parse_conditioning_spec(spec)
    if spec.kind == 'identity':
        return as_image(image).copy()
    if spec.kind == 'blur':
        return apply_blur(image, spec.value)
    if spec.kind == 'context':
        if bbox is None:
            raise ConditioningError("context conditioning needs a bounding box")
        return crop_context(image, bbox, spec.value)
    if spec.kind == 'resolution':
        return downscale(image, spec.value, granularity)
    return reshape_aspect(image, spec.value, granularity)


def fit_to_granularity(image, granularity=DEFAULT_GRANULARITY):
    """Bilinear resize so both sides are multiples of the backend granularity (nearest, at least one unit)."""
    image = as_image(image)
    width, height = image_size(image)
    target = (_snap(width, granularity), _snap(height, granularity))
    if target == (width, height):
        return image
    return _resize(image, *target)
