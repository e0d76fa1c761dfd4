"""On-disk fixtures: synthetic rasters and manifests."""

from pathlib import Path

import numpy as np

from onet.datapipe import write_mask, write_pgm
from onet.datapipe.manifest import HEADER

from oracles import blob_fixture


def smooth_field(h, w, seed=0, depth=8):
    """Low-frequency random texture plus mild noise, quantised to ``depth`` bits."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    f = np.zeros((h, w))
    for _ in range(12):
        fy, fx = rng.uniform(0.5, 6, size=2)
        f += rng.uniform(0.3, 1) * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    f += 0.2 * rng.standard_normal((h, w))
    f = (f - f.min()) / (f.max() - f.min())
    top = 2 ** depth - 1
    return np.floor(f * top + 0.5).astype(np.uint8 if depth <= 8 else np.uint16)


def write_row(fh, *fields):
    fh.write(",".join(f'"{v}"' if "," in str(v) else str(v) for v in fields) + "\n")


def blob_manifest(root, n=8, size=64, seed=0, abn_type="mass", split="train", view="CC"):
    """Write the blob fixture as 8-bit PGM pairs plus a manifest; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    images, masks = blob_fixture(n=n, size=size, seed=seed)
    path = root / "manifest.csv"
    with open(path, "w") as fh:
        fh.write(",".join(HEADER) + "\n")
        for i in range(n):
            sid = f"{abn_type}{i:03d}"
            write_pgm(root / f"{sid}.pgm", np.floor(images[i, 0] * 255 + 0.5).astype(np.uint8))
            write_mask(root / f"{sid}_mask.pgm", masks[i, 0])
            write_row(fh, sid, f"{sid}.pgm", f"{sid}_mask.pgm", view, "L", abn_type,
                      size // 2, size // 2, split, "")
    return path
