"""Mammogram ingestion and preprocessing."""

from .augment import augment_sample, augmentation_angle, preprocess_sample
from .dataset import ArrayDataset, load_arrays
from .image import Image, ImageFormatError, load_image, read_mask, read_pgm, write_image, write_mask, write_pgm
from .manifest import Dataset, ManifestError, Sample, load_manifest, write_manifest
from .transforms import extract_roi, hist_equalize, remove_markers, rotate, rotate_points, to_tensor

__all__ = [
    "ArrayDataset", "Dataset", "Image", "ImageFormatError", "ManifestError", "Sample",
    "augment_sample", "augmentation_angle", "extract_roi", "hist_equalize", "load_arrays",
    "load_image", "load_manifest", "preprocess_sample", "read_mask", "read_pgm", "remove_markers",
    "rotate", "rotate_points", "to_tensor", "write_image", "write_manifest", "write_mask", "write_pgm",
]
