"""Pixel and subject-level evaluation, lesion components and overlays."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .datapipe.image import Image
from .graph import LayerGraph, graph_forward

THRESHOLD = 0.5
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class PixelCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "PixelCounts") -> "PixelCounts":
        return PixelCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _ratio(num: int, den: int) -> float:
    # 0/0 means there was nothing to get wrong
    return 1.0 if den == 0 else num / den


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} mask is not binary")
    return a.astype(bool)


def binarize(prob: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """Label 1 where ``prob >= threshold``; an exact 0.5 is foreground."""
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def confusion_pixels(pred, gt) -> PixelCounts:
    p, g = _binary(pred, "pred"), _binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"mask extents differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return PixelCounts(tp, fp, p.size - tp - fp - fn, fn)


def dice_from(c: PixelCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def iou_from(c: PixelCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def dice(pred, gt) -> float:
    """``2TP / (2TP + FP + FN)``; 1.0 when both masks are empty."""
    return dice_from(confusion_pixels(pred, gt))


def iou(pred, gt) -> float:
    return iou_from(confusion_pixels(pred, gt))


@dataclass(frozen=True)
class Component:
    area: int
    bbox: tuple[int, int, int, int]  # x, y, w, h
    label: int


def detect_components(mask, min_area: int = 50) -> list[Component]:
    """4-connected foreground components of at least ``min_area`` pixels, in raster order."""
    labels, n = ndimage.label(_binary(mask, "input"), structure=_FOUR)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[i] >= min_area:
            ys, xs = sl
            out.append(Component(int(areas[i]), (xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start), i))
    return out


def subject_classification(pred, gt, tau: float = 0.2, min_area: int = 50) -> bool:
    """Correct iff Dice >= ``tau`` on a lesion image, or nothing is detected on a clean one."""
    if np.any(gt):
        return dice(pred, gt) >= tau
    return not detect_components(pred, min_area)


def boundary(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour outside the mask; off-image counts as outside."""
    m = _binary(mask, "input")
    padded = np.pad(m, 1, constant_values=False)
    inner = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return m & ~inner


def overlay_render(img: Image, gt=None, pred=None, min_area: int = 0) -> np.ndarray:
    """8-bit RGB view: ground truth tinted red at 50%, predicted outlines in yellow."""
    gray = np.floor(img.pixels.astype(np.float64) * 255 / (img.levels - 1) + 0.5).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    if gt is not None:
        g = _binary(gt, "gt")
        tinted = np.floor(0.5 * gray[g].astype(np.float64)[:, None] + 0.5 * np.array([255.0, 0.0, 0.0]) + 0.5)
        rgb[g] = tinted.astype(np.uint8)
    if pred is not None:
        p = _binary(pred, "pred")
        if min_area > 0:
            labels, _ = ndimage.label(p, structure=_FOUR)
            keep = [c.label for c in detect_components(p.astype(np.uint8), min_area)]
            p = np.isin(labels, keep)
        rgb[boundary(p)] = (255, 255, 0)
    return rgb


@dataclass
class SampleRow:
    id: str
    abn_type: str
    tp: int
    fp: int
    tn: int
    fn: int
    dice: float
    iou: float
    pixel_accuracy: float
    correct: bool

    @property
    def counts(self) -> PixelCounts:
        return PixelCounts(self.tp, self.fp, self.tn, self.fn)


def make_row(sid: str, abn_type: str, pred, gt, tau: float, min_area: int) -> SampleRow:
    c = confusion_pixels(pred, gt)
    return SampleRow(sid, abn_type, c.tp, c.fp, c.tn, c.fn, dice_from(c), iou_from(c),
                     (c.tp + c.tn) / c.total, subject_classification(pred, gt, tau, min_area))


@dataclass
class Aggregates:
    mean_dice: float
    mean_iou: float
    sensitivity: float
    specificity: float
    pixel_accuracy: float
    accuracy_by_type: dict[str, float]


def aggregate(rows: list[SampleRow]) -> Aggregates:
    """Pooled pixel rates and per-type subject accuracy from per-sample rows."""
    if not rows:
        raise ValueError("no samples to aggregate")
    total = PixelCounts(0, 0, 0, 0)
    for r in rows:
        total = total + r.counts
    by_type: dict[str, list[bool]] = {}
    for r in rows:
        by_type.setdefault(r.abn_type, []).append(r.correct)
    return Aggregates(
        mean_dice=float(np.mean([r.dice for r in rows])),
        mean_iou=float(np.mean([r.iou for r in rows])),
        sensitivity=_ratio(total.tp, total.tp + total.fn),
        specificity=_ratio(total.tn, total.tn + total.fp),
        pixel_accuracy=(total.tp + total.tn) / total.total,
        accuracy_by_type={k: sum(v) / len(v) for k, v in sorted(by_type.items())},
    )


@dataclass
class EvalReport:
    rows: list[SampleRow]
    tau: float
    threshold: float
    min_area: int
    aggregates: Aggregates = field(init=False)

    def __post_init__(self):
        self.aggregates = aggregate(self.rows)

    def write_csv(self, path) -> None:
        names = list(SampleRow.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                d = asdict(r)
                w.writerow([repr(d[k]) if isinstance(d[k], float) else int(d[k]) if isinstance(d[k], bool)
                            else d[k] for k in names])

    def summary(self) -> str:
        a = self.aggregates
        lines = [
            f"samples         {len(self.rows)}",
            f"tau             {self.tau:g}",
            f"threshold       {self.threshold:g}",
            f"min_area        {self.min_area}",
            f"mean_dice       {a.mean_dice:.6f}",
            f"mean_iou        {a.mean_iou:.6f}",
            f"sensitivity     {a.sensitivity:.6f}",
            f"specificity     {a.specificity:.6f}",
            f"pixel_accuracy  {a.pixel_accuracy:.6f}",
        ]
        for k, v in a.accuracy_by_type.items():
            lines.append(f"accuracy[{k}]{' ' * max(1, 6 - len(k))}{v:.6f}")
        return "\n".join(lines)

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.summary() + "\n")


def read_rows(path) -> list[SampleRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for d in csv.DictReader(fh):
            out.append(SampleRow(d["id"], d["abn_type"], int(d["tp"]), int(d["fp"]), int(d["tn"]), int(d["fn"]),
                                 float(d["dice"]), float(d["iou"]), float(d["pixel_accuracy"]),
                                 d["correct"] == "1"))
        return out


def predict(g: LayerGraph, inputs: np.ndarray, batch: int = 1) -> np.ndarray:
    """Sigmoid maps ``[N, 1, S, S]`` for ``inputs``, a few samples at a time."""
    outs = [graph_forward(g, inputs[i:i + batch].astype(g.dtype, copy=False))
            for i in range(0, len(inputs), batch)]
    return np.concatenate(outs)


def evaluate(g: LayerGraph | None, dataset, tau: float = 0.2, threshold: float = THRESHOLD,
             min_area: int = 50, probs: np.ndarray | None = None) -> EvalReport:
    """Binarize the model output and score every sample of an ``ArrayDataset``.

    ``probs`` may be given instead of a graph to score precomputed maps.
    """
    if probs is None:
        probs = predict(g, dataset.inputs)
    rows = [make_row(sid, t, binarize(p[0], threshold), dataset.targets[i, 0].astype(np.uint8), tau, min_area)
            for i, (sid, t, p) in enumerate(zip(dataset.ids, dataset.abn_types, probs))]
    return EvalReport(rows, tau, threshold, min_area)
