"""O-net and U-net graph builders, plus the reference layer-table conformance check.

O-net: one shared encoder and first decoder step, then two decoder branches
("up" with the larger kernel, "bottom" with the smaller one) that each rebuild
the skip path back to half resolution. The two branch outputs are
concatenated, reduced by one more conv, upsampled to full size and mapped to a
probability map by a sigmoid head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from .graph import GraphBuildError, LayerGraph, graph_build


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 1024
    base_channels: int = 8
    depth: int = 6
    kernel_bottom: int = 3
    kernel_up: int = 5
    head_kernel: int = 3
    precision: str = "double"
    arch: str = "onet"

    def validate(self) -> None:
        s, d = self.input_size, self.depth
        if d < 2:
            raise GraphBuildError(f"depth must be >= 2, got {d}")
        if s < 1 or s % (2 ** d):
            raise GraphBuildError(f"input_size {s} is not divisible by 2^depth = {2 ** d}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise GraphBuildError(f"base_channels must be an even number >= 2, got {self.base_channels}")
        for name in ("kernel_bottom", "kernel_up", "head_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise GraphBuildError(f"{name} must be odd, got {k}")
        if self.arch not in ("onet", "unet"):
            raise GraphBuildError(f"arch must be 'onet' or 'unet', got {self.arch!r}")
        if self.precision not in ("double", "single"):
            raise GraphBuildError(f"precision must be 'double' or 'single', got {self.precision!r}")

    def channels(self, stage: int) -> int:
        """Channels of encoder layer ``stage`` (1-based)."""
        return self.base_channels * 2 ** (stage - 1)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


DEFAULT_CONFIG = ModelConfig()


class _Builder:
    def __init__(self):
        self.descs: list[dict] = []

    def add(self, nid, kind, inputs=(), **kw):
        self.descs.append({"id": nid, "kind": kind, "inputs": list(inputs), **kw})
        return nid

    def conv(self, tag, src, ci, co, k, layer, branch=None):
        c = self.add(f"{tag}.conv", "conv", [src], in_channels=ci, out_channels=co, kernel=k,
                     stride=1, padding=(k - 1) // 2, layer=layer, branch=branch)
        return self.add(f"{tag}.relu", "relu", [c], layer=layer, branch=branch)

    def up(self, tag, src, ci, co, layer, branch=None):
        c = self.add(f"{tag}.convtrans", "convtrans", [src], in_channels=ci, out_channels=co,
                     kernel=2, stride=2, padding=0, layer=layer, branch=branch)
        return self.add(f"{tag}.relu", "relu", [c], layer=layer, branch=branch)


def _prefix(layer, branch):
    return f"L{layer}" if branch is None else f"L{layer}.{branch}"


def _decoder_branch(b: _Builder, cfg: ModelConfig, src: str, skips: dict[int, str], first_layer: int,
                    kernel: int, branch: str | None):
    """One decoder path from the shared concat down to half resolution.

    For encoder level j = D-1 .. 2: conv(2C_j -> C_j), upsample to C_{j-1},
    concat with encoder layer j-1. At depth 2 there is no such level and the
    branch reduces to conv(2C_1 -> C_1) followed by the concat with layer 1.
    """
    layer = first_layer
    levels = list(range(cfg.depth - 1, 1, -1))
    if not levels:
        c1 = cfg.channels(1)
        x = b.conv(_prefix(layer, branch), src, 2 * c1, c1, kernel, layer, branch)
        layer += 1
        x = b.add(f"{_prefix(layer, branch)}.concat", "concat", [x, skips[1]], layer=layer, branch=branch)
        return x, layer + 1
    x = src
    for j in levels:
        cj = cfg.channels(j)
        x = b.conv(_prefix(layer, branch), x, 2 * cj, cj, kernel, layer, branch)
        layer += 1
        x = b.up(_prefix(layer, branch), x, cj, cj // 2, layer, branch)
        layer += 1
        x = b.add(f"{_prefix(layer, branch)}.concat", "concat", [x, skips[j - 1]], layer=layer, branch=branch)
        layer += 1
    return x, layer


def _build(cfg: ModelConfig, dual: bool, seed: int) -> LayerGraph:
    cfg.validate()
    b = _Builder()
    s, d = cfg.input_size, cfg.depth
    x = b.add("input", "input", shape=[1, s, s])
    skips: dict[int, str] = {}
    cin = 1
    for i in range(1, d + 1):
        ci = cfg.channels(i)
        x = b.conv(f"L{i}", x, cin, ci, cfg.kernel_bottom, i)
        x = b.add(f"L{i}.pool", "maxpool", [x], layer=i)
        skips[i] = x
        cin = ci
    layer = d + 1
    x = b.up(f"L{layer}", x, cfg.channels(d), cfg.channels(d - 1), layer)
    layer += 1
    x = b.add(f"L{layer}.concat", "concat", [x, skips[d - 1]], layer=layer)
    layer += 1
    if dual:
        up_out, nxt = _decoder_branch(b, cfg, x, skips, layer, cfg.kernel_up, "up")
        bot_out, _ = _decoder_branch(b, cfg, x, skips, layer, cfg.kernel_bottom, "bottom")
        layer = nxt
        x = b.add(f"L{layer}.concat", "concat", [up_out, bot_out], layer=layer)
        merged = 4 * cfg.base_channels
    else:
        x, layer = _decoder_branch(b, cfg, x, skips, layer, cfg.kernel_bottom, None)
        merged = 2 * cfg.base_channels
    layer += 1
    x = b.conv(f"L{layer}", x, merged, cfg.base_channels, cfg.kernel_bottom, layer)
    layer += 1
    x = b.up(f"L{layer}", x, cfg.base_channels, cfg.base_channels // 2, layer)
    hk = cfg.head_kernel
    x = b.add("head.conv", "conv", [x], in_channels=cfg.base_channels // 2, out_channels=1, kernel=hk,
              stride=1, padding=(hk - 1) // 2)
    x = b.add("head.sigmoid", "sigmoid", [x])
    b.add("output", "output", [x])
    return graph_build(b.descs, seed=seed, precision=cfg.precision, config=cfg)


def build_onet(cfg: ModelConfig = DEFAULT_CONFIG, seed: int = 0) -> LayerGraph:
    return _build(replace(cfg, arch="onet"), dual=True, seed=seed)


def build_unet(cfg: ModelConfig = DEFAULT_CONFIG, seed: int = 0) -> LayerGraph:
    """Single-decoder baseline: same encoder and head, bottom kernel only.

    Layer numbers follow the O-net where the layers correspond, so the
    cross-branch concat number is simply absent.
    """
    return _build(replace(cfg, arch="unet"), dual=False, seed=seed)


def build_model(cfg: ModelConfig, seed: int = 0) -> LayerGraph:
    cfg.validate()
    return build_onet(cfg, seed) if cfg.arch == "onet" else build_unet(cfg, seed)


# Reference layer-table rows as printed: "k x C x H x W" means k*C channels.
TABLE1 = {
    "input": "1024×1024",
    1: "8×512×512", 2: "16×256×256", 3: "32×128×128", 4: "64×64×64", 5: "128×32×32", 6: "256×16×16",
    7: "128×32×32", 8: "2×128×32×32", 9: "128×32×32", 10: "64×64×64", 11: "2×64×64×64", 12: "64×64×64",
    13: "32×128×128", 14: "2×32×128×128", 15: "32×128×128", 16: "16×256×256", 17: "2×16×256×256",
    18: "16×256×256", 19: "8×512×512", 20: "2×8×512×512", 21: "4×8×512×512", 22: "8×512×512",
    23: "4×1024×1024",
    "output": "1024×1024",
}


def parse_feature_size(text: str) -> tuple[int, int, int]:
    """``"2×8×512×512"`` -> ``(16, 512, 512)``; a bare ``H×W`` is one channel."""
    parts = [int(p) for p in text.replace("x", "×").split("×")]
    if len(parts) == 2:
        return (1, parts[0], parts[1])
    channels = 1
    for p in parts[:-2]:
        channels *= p
    return (channels, parts[-2], parts[-1])


@dataclass
class ConformanceRow:
    row: str
    expected: tuple[int, int, int]
    actual: list[tuple[str, tuple[int, int, int]]]
    passed: bool


@dataclass
class ConformanceReport:
    applicable: bool
    rows: list[ConformanceRow]
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.applicable and all(r.passed for r in self.rows)

    @property
    def numbered_passed(self) -> int:
        return sum(r.passed for r in self.rows if r.row.isdigit())

    def failed_rows(self) -> list[str]:
        return [r.row for r in self.rows if not r.passed]

    def to_text(self) -> str:
        if not self.applicable:
            return self.note
        lines = []
        for r in self.rows:
            got = ", ".join(f"{nid}={'x'.join(map(str, shp))}" for nid, shp in r.actual) or "missing"
            exp = "x".join(map(str, r.expected))
            lines.append(f"{r.row:>6}  {exp:<14} {'PASS' if r.passed else 'FAIL'}  {got}")
        n = sum(1 for r in self.rows if r.row.isdigit())
        lines.append(f"numbered rows passed: {self.numbered_passed}/{n}; overall {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _layer_outputs(g: LayerGraph, layer: int) -> list[tuple[str, tuple[int, int, int]]]:
    """Last node carrying ``layer`` in each branch (that node holds the layer's feature map)."""
    last: dict[str | None, tuple[str, tuple[int, int, int]]] = {}
    for n in g.nodes:
        if n.layer == layer:
            last[n.branch] = (n.id, n.out_shape)
    return list(last.values())


def verify_table1(g: LayerGraph) -> ConformanceReport:
    cfg = g.config
    if cfg is None or replace(cfg, precision="double", arch="onet") != DEFAULT_CONFIG:
        return ConformanceReport(False, [], "not applicable: non-default config")
    rows = []
    inp = g.input_node
    exp = parse_feature_size(TABLE1["input"])
    rows.append(ConformanceRow("input", exp, [(inp.id, inp.out_shape)], inp.out_shape == exp))
    for layer in range(1, 24):
        exp = parse_feature_size(TABLE1[layer])
        got = _layer_outputs(g, layer)
        rows.append(ConformanceRow(str(layer), exp, got, bool(got) and all(s == exp for _, s in got)))
    out = g.output_node
    exp = parse_feature_size(TABLE1["output"])
    rows.append(ConformanceRow("output", exp, [(out.id, out.out_shape)], out.out_shape == exp))
    return ConformanceReport(True, rows)


def layer_table(g: LayerGraph) -> list[tuple[str, tuple[int, int, int]]]:
    """Numbered layers (one row per branch instance) between input and output."""
    rows = [("input", g.input_node.out_shape)]
    layers = sorted({n.layer for n in g.nodes if n.layer is not None})
    for layer in layers:
        for nid, shp in _layer_outputs(g, layer):
            rows.append((f"{layer} ({nid})", shp))
    rows.append(("output", g.output_node.out_shape))
    return rows
