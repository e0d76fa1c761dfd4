"""Turn a manifest into network-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import augment_sample, preprocess_sample
from .image import load_image
from .manifest import Dataset
from .transforms import to_tensor


@dataclass
class ArrayDataset:
    ids: list[str]
    abn_types: list[str]
    inputs: np.ndarray   # [N, 1, S, S] in [0, 1]
    targets: np.ndarray  # [N, 1, S, S] in {0, 1}

    def __len__(self) -> int:
        return len(self.ids)


def load_arrays(manifest: Dataset, size: int, augment: int = 0, seed: int = 0,
                dtype=np.float64) -> ArrayDataset:
    """Preprocess every sample, plus ``augment`` rotated copies of each.

    Samples without a mask get an all-zero target.
    """
    ids, types, xs, ys = [], [], [], []
    for s in manifest:
        img = load_image(s.image, s.mask)
        variants = [preprocess_sample(s, size, img)]
        variants += [augment_sample(s, seed, size, img, index=k) for k in range(augment)]
        for out, roi in variants:
            x, y = to_tensor(roi, dtype)
            ids.append(out.id)
            types.append(out.abn_type)
            xs.append(x[0])
            ys.append(y[0] if y is not None else np.zeros_like(x[0]))
    if not ids:
        raise ValueError("manifest selects no samples")
    return ArrayDataset(ids, types, np.stack(xs), np.stack(ys))
