"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ONET"                      magic
    u32                          format version
    u64                          metadata length in bytes
    metadata                     UTF-8 JSON: model config, precision, registry, ADAM hyper-parameters
    per registry entry, in order: weight, bias, m(weight), m(bias), v(weight), v(bias)
                                 raw IEEE-754 little-endian, float64 or float32 per precision
    u64                          ADAM step count
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import LayerGraph
from .models import ModelConfig
from .optim import AdamState

MAGIC = b"ONET"
VERSION = 1
_DTYPES = {"double": "<f8", "single": "<f4"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    registry: list[dict]
    params: list[np.ndarray]
    state: AdamState


def _registry(g: LayerGraph) -> list[dict]:
    return [{"id": nid, "weight": list(w.shape), "bias": list(b.shape)} for nid, w, b in g.params]


def save_checkpoint(path, g: LayerGraph, state: AdamState, config: ModelConfig) -> None:
    dt = np.dtype(_DTYPES[config.precision])
    params = g.param_arrays()
    if len(state.m) != len(params):
        raise CheckpointError(f"optimizer state has {len(state.m)} entries, registry has {len(params)}")
    meta = {
        "config": config.to_dict(),
        "precision": config.precision,
        "registry": _registry(g),
        "adam": {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for i in range(0, len(params), 2):
            for arr in (params[i], params[i + 1], state.m[i], state.m[i + 1], state.v[i], state.v[i + 1]):
                fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        fh.write(struct.pack("<Q", state.t))


def load_checkpoint(path, graph: LayerGraph | None = None) -> Checkpoint:
    """Read a checkpoint; with ``graph``, also check its registry and copy the
    parameters into it."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {data[:4]!r}")
    if len(data) < 16:
        raise CheckpointError(f"truncated checkpoint {path}: header incomplete")
    version, meta_len = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    off = 16
    if len(data) < off + meta_len:
        raise CheckpointError(f"truncated checkpoint {path}: metadata incomplete")
    try:
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata in {path}: {exc}") from exc
    off += meta_len
    config = ModelConfig.from_dict(meta["config"])
    dt = np.dtype(_DTYPES[meta["precision"]])
    registry = meta["registry"]
    need = sum(3 * (int(np.prod(e["weight"])) + int(np.prod(e["bias"]))) for e in registry) * dt.itemsize
    if len(data) != off + need + 8:
        raise CheckpointError(f"truncated checkpoint {path}: expected {off + need + 8} bytes, found {len(data)}")

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(shape).astype(dt.newbyteorder("="))
        off += count * dt.itemsize
        return arr

    params, m, v = [], [], []
    for entry in registry:
        w, b = take(entry["weight"]), take(entry["bias"])
        mw, mb = take(entry["weight"]), take(entry["bias"])
        vw, vb = take(entry["weight"]), take(entry["bias"])
        params += [w, b]
        m += [mw, mb]
        v += [vw, vb]
    (t,) = struct.unpack_from("<Q", data, off)
    state = AdamState(m, v, t, **meta["adam"])
    ckpt = Checkpoint(config, registry, params, state)
    if graph is not None:
        apply_checkpoint(graph, ckpt)
    return ckpt


def apply_checkpoint(graph: LayerGraph, ckpt: Checkpoint) -> None:
    """Copy stored parameters into ``graph`` after checking registry order and shapes."""
    mine = _registry(graph)
    if mine != ckpt.registry:
        diff = next(
            (f"entry {i}: graph {a} vs checkpoint {b}" for i, (a, b) in enumerate(zip(mine, ckpt.registry)) if a != b),
            f"graph has {len(mine)} entries, checkpoint has {len(ckpt.registry)}",
        )
        raise CheckpointError(f"registry mismatch: {diff}")
    for dst, src in zip(graph.param_arrays(), ckpt.params):
        dst[...] = src
