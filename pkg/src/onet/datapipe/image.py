"""Grayscale raster type and binary PGM/PPM I/O."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


@dataclass
class Image:
    """Unsigned grayscale raster with an optional aligned binary mask.

    ``pixels`` is ``(height, width)``; ``depth`` is bits per sample, so values
    are below ``2 ** depth``.
    """

    pixels: np.ndarray
    depth: int = 8
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ImageFormatError(f"pixels must be 2-D, got shape {self.pixels.shape}")
        if not 1 <= self.depth <= 16:
            raise ImageFormatError(f"depth must be 1..16 bits, got {self.depth}")
        if self.pixels.size and int(self.pixels.max()) >= 2 ** self.depth:
            raise ImageFormatError(f"sample value {int(self.pixels.max())} does not fit in {self.depth} bits")
        if self.mask is not None:
            if self.mask.shape != self.pixels.shape:
                raise ImageFormatError(f"mask extent {self.mask.shape} != image extent {self.pixels.shape}")
            if not np.all((self.mask == 0) | (self.mask == 1)):
                raise ImageFormatError("mask values must be 0 or 1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def levels(self) -> int:
        return 2 ** self.depth

    def with_pixels(self, pixels: np.ndarray, mask: np.ndarray | None = None) -> "Image":
        return replace(self, pixels=pixels, mask=self.mask if mask is None else mask)


def storage_dtype(depth: int):
    return np.uint8 if depth <= 8 else np.uint16


_HEADER = re.compile(rb"(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _read_netpbm(path, magic: bytes):
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if not m or m.group(1) != magic:
        raise ImageFormatError(f"{path}: not a binary {magic.decode()} file")
    width, height, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: maxval {maxval} out of range")
    channels = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    body = data[m.end():]
    if len(body) < count * dt.itemsize:
        raise ImageFormatError(f"{path}: truncated raster ({len(body)} of {count * dt.itemsize} bytes)")
    arr = np.frombuffer(body, dtype=dt, count=count).astype(dt.newbyteorder("="))
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape), maxval


def read_pgm_header(path) -> tuple[int, int, int]:
    """``(width, height, maxval)`` without decoding the raster."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    m = _HEADER.match(head)
    if not m or m.group(1) != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    return int(m.group(2)), int(m.group(3)), int(m.group(4))


def read_pgm(path) -> Image:
    arr, maxval = _read_netpbm(path, b"P5")
    depth = 8 if maxval <= 255 else maxval.bit_length()
    return Image(arr.astype(storage_dtype(depth)), depth)


def read_mask(path) -> np.ndarray:
    """8-bit PGM mask with values {0, 255} (or {0, 1}) -> uint8 {0, 1}."""
    arr, _ = _read_netpbm(path, b"P5")
    if not np.all(np.isin(arr, (0, 1, 255))):
        raise ImageFormatError(f"{path}: mask has values other than 0/255")
    return (arr > 0).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray, depth: int = 8) -> None:
    maxval = 2 ** depth - 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=dt).tobytes())


def write_image(path, img: Image) -> None:
    write_pgm(path, img.pixels, img.depth)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, (mask > 0).astype(np.uint8) * 255, 8)


def load_image(image_path, mask_path=None) -> Image:
    img = read_pgm(image_path)
    if mask_path:
        img = img.with_pixels(img.pixels, read_mask(mask_path))
    return img


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    arr, _ = _read_netpbm(path, b"P6")
    return arr.astype(np.uint8)
