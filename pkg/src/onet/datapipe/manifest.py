"""CSV manifest of mammogram samples."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .image import ImageFormatError, read_pgm_header

HEADER = ["id", "image", "mask", "view", "laterality", "abn_type", "center_x", "center_y", "split", "markers"]
VIEWS = ("CC", "MLO")
SIDES = ("L", "R")
ABN_TYPES = ("calc", "mass")
SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    image: Path
    mask: Path | None
    view: str
    laterality: str
    abn_type: str
    center_x: float
    center_y: float
    split: str
    markers: tuple[tuple[int, int, int, int], ...] = ()

    @property
    def center(self) -> tuple[float, float]:
        return self.center_x, self.center_y

    def moved(self, **changes) -> "Sample":
        return replace(self, **changes)


@dataclass
class Dataset:
    samples: list[Sample]
    source: Path | None = None
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if not self.counts:
            self.counts = Counter((s.abn_type, s.split) for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def split(self, name: str) -> "Dataset":
        return Dataset([s for s in self.samples if s.split == name], self.source)

    def summary(self) -> str:
        lines = [f"{len(self.samples)} samples"]
        for key in sorted(self.counts):
            lines.append(f"  {key[0]:<5} {key[1]:<5} {self.counts[key]}")
        return "\n".join(lines)


def parse_markers(text: str) -> tuple[tuple[int, int, int, int], ...]:
    text = text.strip()
    if not text:
        return ()
    rects = []
    for group in text.split(";"):
        parts = [p.strip() for p in group.split(",")]
        if len(parts) != 4:
            raise ValueError(f"marker {group!r} is not x,y,w,h")
        x, y, w, h = (int(p) for p in parts)
        if w <= 0 or h <= 0:
            raise ValueError(f"marker {group!r} has non-positive size")
        rects.append((x, y, w, h))
    return tuple(rects)


def format_markers(rects) -> str:
    return ";".join(",".join(str(int(v)) for v in r) for r in rects)


def _choice(value: str, allowed, name: str) -> str:
    if value not in allowed:
        raise ValueError(f"{name} {value!r} not in {list(allowed)}")
    return value


def _parse_row(row: dict, base: Path) -> Sample:
    sid = row["id"].strip()
    if not sid:
        raise ValueError("empty id")
    mask = row["mask"].strip()
    return Sample(
        id=sid,
        image=base / row["image"].strip(),
        mask=base / mask if mask else None,
        view=_choice(row["view"].strip(), VIEWS, "view"),
        laterality=_choice(row["laterality"].strip(), SIDES, "laterality"),
        abn_type=_choice(row["abn_type"].strip(), ABN_TYPES, "abn_type"),
        center_x=float(row["center_x"]),
        center_y=float(row["center_y"]),
        split=_choice(row["split"].strip(), SPLITS, "split"),
        markers=parse_markers(row.get("markers") or ""),
    )


def _check_sample(s: Sample) -> None:
    for path in (s.image, s.mask):
        if path is not None and not path.is_file():
            raise ManifestError(f"sample {s.id}: cannot resolve {path}")
    try:
        width, height, _ = read_pgm_header(s.image)
    except ImageFormatError as exc:
        raise ManifestError(f"sample {s.id}: {exc}") from exc
    if not (0 <= s.center_x < width and 0 <= s.center_y < height):
        raise ManifestError(
            f"sample {s.id}: center ({s.center_x:g}, {s.center_y:g}) outside {width}x{height} image"
        )


def load_manifest(path, view_filter: str | None = "CC", abn_type: str | None = None) -> Dataset:
    """Parse a manifest, keep rows matching ``view_filter`` (and ``abn_type``),
    and check that their files exist and centres lie inside the image.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    samples = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != HEADER:
            raise ManifestError(f"{path}:1: header must be {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise ManifestError(f"{path}:{line}: expected {len(HEADER)} fields")
            try:
                s = _parse_row(row, base)
            except ValueError as exc:
                raise ManifestError(f"{path}:{line}: {exc}") from exc
            if s.id in seen:
                raise ManifestError(f"{path}:{line}: duplicate id {s.id}")
            seen.add(s.id)
            if view_filter is not None and s.view != view_filter:
                continue
            if abn_type is not None and s.abn_type != abn_type:
                continue
            _check_sample(s)
            samples.append(s)
    return Dataset(samples, path)


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_manifest(path, samples) -> None:
    """Write samples with paths relative to the manifest's directory where possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return ""
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for s in samples:
            w.writerow([s.id, rel(s.image), rel(s.mask), s.view, s.laterality, s.abn_type,
                        _num(s.center_x), _num(s.center_y), s.split, format_markers(s.markers)])
