"""Pixel-level preprocessing: ROI crop, histogram equalization, rotation,
marker removal and conversion to network tensors."""

from __future__ import annotations

import math

import numpy as np

from .image import Image, storage_dtype

Rect = tuple[int, int, int, int]  # x, y, w, h


def roi_origin(width: int, height: int, center: tuple[float, float], size: int) -> tuple[int, int]:
    """Top-left corner of a ``size`` window centred on ``center``, shifted so
    that it overlaps the image as much as possible."""
    def axis(c, extent):
        lo, hi = min(0, extent - size), max(0, extent - size)
        return int(min(max(int(round(c)) - size // 2, lo), hi))

    return axis(center[0], width), axis(center[1], height)


def extract_roi(img: Image, center: tuple[float, float], size: int = 1024) -> Image:
    """``size`` x ``size`` crop around ``center``; area outside the image is zero."""
    if size > 2 * img.width and size > 2 * img.height:
        raise ValueError(f"ROI size {size} exceeds twice the image extent {img.width}x{img.height}")
    x0, y0 = roi_origin(img.width, img.height, center, size)
    return img.with_pixels(*_crop(img, x0, y0, size))


def _crop(img: Image, x0: int, y0: int, size: int):
    out = np.zeros((size, size), dtype=img.pixels.dtype)
    mask = None if img.mask is None else np.zeros((size, size), dtype=img.mask.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, img.width), min(y0 + size, img.height)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img.pixels[sy0:sy1, sx0:sx1]
        if mask is not None:
            mask[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img.mask[sy0:sy1, sx0:sx1]
    return out, mask


def equalization_lut(pixels: np.ndarray, levels: int, region: np.ndarray | None = None) -> np.ndarray:
    values = pixels if region is None else pixels[region.astype(bool)]
    hist = np.bincount(values.ravel(), minlength=levels)[:levels]
    total = hist.sum()
    if total == 0:
        return np.arange(levels)
    cdf = np.cumsum(hist) / total
    return np.floor((levels - 1) * cdf + 0.5).astype(np.int64)


def hist_equalize(img: Image, region: np.ndarray | None = None) -> Image:
    """Map each level ``v`` to ``round((L - 1) * CDF(v))``.

    The CDF is taken over the whole image, or over ``region`` (e.g. a breast
    mask) when given; the mapping is applied to every pixel.
    """
    lut = equalization_lut(img.pixels, img.levels, region)
    return img.with_pixels(lut[img.pixels].astype(img.pixels.dtype))


def _cos_sin(angle: float) -> tuple[float, float]:
    if angle % 90 == 0:
        quarter = int(angle // 90) % 4
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][quarter]
    rad = math.radians(angle)
    return math.cos(rad), math.sin(rad)


def rotate_points(points: np.ndarray, angle: float, width: int, height: int) -> np.ndarray:
    """Where ``(x, y)`` points land after :func:`rotate` by ``angle`` degrees."""
    c, s = _cos_sin(angle)
    cx, cy = (width - 1) / 2, (height - 1) / 2
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
    return np.stack([c * dx + s * dy + cx, -s * dx + c * dy + cy], axis=1)


def _source_coords(angle: float, width: int, height: int):
    c, s = _cos_sin(angle)
    cx, cy = (width - 1) / 2, (height - 1) / 2
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    dx, dy = xx - cx, yy - cy
    # inverse of rotate_points
    return c * dx - s * dy + cx, s * dx + c * dy + cy


def _sample_zero(arr: np.ndarray, yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    out = np.zeros(yi.shape, dtype=float)
    out[ok] = arr[yi[ok], xi[ok]]
    return out


def rotate(img: Image, angle: float) -> Image:
    """Rotate about the image centre, keeping the extent.

    Counter-clockwise as displayed for positive ``angle``. Destination pixels
    are pulled back through the inverse rotation; the image is sampled
    bilinearly and the mask by nearest neighbour, with anything outside the
    source domain read as zero.
    """
    xs, ys = _source_coords(angle, img.width, img.height)
    x0, y0 = np.floor(xs).astype(np.int64), np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0
    p = img.pixels
    val = ((1 - fy) * ((1 - fx) * _sample_zero(p, y0, x0) + fx * _sample_zero(p, y0, x0 + 1))
           + fy * ((1 - fx) * _sample_zero(p, y0 + 1, x0) + fx * _sample_zero(p, y0 + 1, x0 + 1)))
    pixels = np.clip(np.floor(val + 0.5), 0, img.levels - 1).astype(p.dtype)
    mask = None
    if img.mask is not None:
        xn, yn = np.floor(xs + 0.5).astype(np.int64), np.floor(ys + 0.5).astype(np.int64)
        mask = _sample_zero(img.mask, yn, xn).astype(img.mask.dtype)
    return Image(pixels, img.depth, mask)


def remove_markers(img: Image, rects) -> Image:
    """Zero every pixel inside any ``(x, y, w, h)`` rectangle; the mask is left alone."""
    out = img.pixels.copy()
    for x, y, w, h in rects:
        xa, ya = max(int(x), 0), max(int(y), 0)
        xb, yb = min(int(x + w), img.width), min(int(y + h), img.height)
        if xb > xa and yb > ya:
            out[ya:yb, xa:xb] = 0
    return img.with_pixels(out)


def transform_rects(rects, angle: float, width: int, height: int) -> list[Rect]:
    """Axis-aligned bounding boxes of rectangles carried through :func:`rotate`.

    Off the quarter turns the box is grown by the half pixel that bilinear
    sampling bleeds, so zeroing it removes every trace of the rectangle.
    """
    pad = 0.0 if angle % 90 == 0 else 0.5
    out = []
    for x, y, w, h in rects:
        lo_x, lo_y, hi_x, hi_y = x - 0.5 - pad, y - 0.5 - pad, x + w - 0.5 + pad, y + h - 0.5 + pad
        corners = np.array([[lo_x, lo_y], [hi_x, lo_y], [lo_x, hi_y], [hi_x, hi_y]], dtype=float)
        moved = rotate_points(corners, angle, width, height) + 0.5
        xa, ya = np.floor(moved.min(axis=0)).astype(int)
        xb, yb = np.ceil(moved.max(axis=0)).astype(int)
        out.append((int(xa), int(ya), int(xb - xa), int(yb - ya)))
    return out


def shift_rects(rects, dx: int, dy: int, size: int) -> list[Rect]:
    """Move rectangles by ``(-dx, -dy)`` and clip them to a ``size`` window, dropping empties."""
    out = []
    for x, y, w, h in rects:
        xa, ya = max(x - dx, 0), max(y - dy, 0)
        xb, yb = min(x - dx + w, size), min(y - dy + h, size)
        if xb > xa and yb > ya:
            out.append((xa, ya, xb - xa, yb - ya))
    return out


def to_tensor(img: Image, dtype=np.float64):
    """``(image [1,1,H,W] in [0, 1], mask [1,1,H,W] in {0, 1} or None)``."""
    x = (img.pixels.astype(dtype) / (img.levels - 1))[None, None]
    y = None if img.mask is None else img.mask.astype(dtype)[None, None]
    return x, y


def from_probability(prob: np.ndarray, depth: int = 8) -> Image:
    """Quantise a ``[H, W]`` map in [0, 1] to an image of the given depth."""
    levels = 2 ** depth
    q = np.clip(np.floor(prob * (levels - 1) + 0.5), 0, levels - 1)
    return Image(q.astype(storage_dtype(depth)), depth)
