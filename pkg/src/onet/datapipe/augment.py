"""Per-sample preprocessing chain and seeded rotation augmentation."""

from __future__ import annotations

import zlib

import numpy as np

from .image import Image, load_image
from .manifest import Sample
from .transforms import (extract_roi, hist_equalize, remove_markers, roi_origin, rotate,
                         rotate_points, shift_rects, transform_rects)

MAX_ANGLE = 180.0


def _roi_chain(sample: Sample, img: Image, center, rects, size: int) -> tuple[Sample, Image]:
    x0, y0 = roi_origin(img.width, img.height, center, size)
    roi = extract_roi(img, center, size)
    roi = remove_markers(roi, shift_rects(rects, x0, y0, size))
    roi = hist_equalize(roi)
    out = sample.moved(center_x=float(center[0] - x0), center_y=float(center[1] - y0), markers=())
    return out, roi


def preprocess_sample(sample: Sample, size: int = 1024, image: Image | None = None) -> tuple[Sample, Image]:
    """ROI crop, marker removal and equalization of one sample.

    The returned sample carries the centre in ROI coordinates and no markers,
    so running the chain again on the output reproduces it exactly.
    """
    img = image if image is not None else load_image(sample.image, sample.mask)
    return _roi_chain(sample, img, sample.center, sample.markers, size)


def augmentation_angle(sample_id: str, seed: int, index: int = 0) -> float:
    rng = np.random.default_rng([seed, zlib.crc32(sample_id.encode("utf-8")), index])
    return float(rng.uniform(0.0, MAX_ANGLE))


def augment_sample(sample: Sample, seed: int, size: int = 1024, image: Image | None = None,
                   index: int = 0) -> tuple[Sample, Image]:
    """One rotated pseudo-sample, deterministic in ``(sample.id, seed, index)``.

    The full image and mask are rotated by an angle in [0, 180) degrees, the
    abnormality centre and marker rectangles are carried along, then the usual
    ROI chain runs on the rotated image.
    """
    img = image if image is not None else load_image(sample.image, sample.mask)
    angle = augmentation_angle(sample.id, seed, index)
    rotated = rotate(img, angle)
    center = rotate_points([sample.center], angle, img.width, img.height)[0]
    rects = transform_rects(sample.markers, angle, img.width, img.height)
    pseudo = sample.moved(id=f"{sample.id}_aug{seed}_{index}")
    return _roi_chain(pseudo, rotated, (float(center[0]), float(center[1])), rects, size)
