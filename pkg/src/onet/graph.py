"""Layer DAG: build-time validation and shape inference, forward/backward
execution in topological order, and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from . import tensor as T
from .tensor import ConvSpec

KINDS = ("input", "conv", "convtrans", "maxpool", "relu", "sigmoid", "concat", "output")
PARAM_KINDS = ("conv", "convtrans")


class GraphBuildError(ValueError):
    pass


@dataclass
class Node:
    id: str
    kind: str
    inputs: tuple[str, ...]
    out_shape: tuple[int, int, int]
    spec: ConvSpec | None = None
    layer: int | None = None
    branch: str | None = None


@dataclass
class LayerGraph:
    nodes: list[Node]
    config: Any = None
    _index: dict[str, Node] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {n.id: n for n in self.nodes}

    def __getitem__(self, node_id: str) -> Node:
        return self._index[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    @property
    def input_node(self) -> Node:
        return self.nodes[0]

    @property
    def output_node(self) -> Node:
        return self.nodes[-1]

    @property
    def dtype(self):
        for node in self.nodes:
            if node.spec is not None:
                return node.spec.weight.dtype
        return np.dtype(np.float64)

    @property
    def params(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """Parameter registry ``(node id, weight, bias)`` in topological order."""
        return [(n.id, n.spec.weight, n.spec.bias) for n in self.nodes if n.spec is not None]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for _, w, b in self.params:
            out += [w, b]
        return out

    def param_count(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def consumers(self, node_id: str) -> list[str]:
        return [n.id for n in self.nodes if node_id in n.inputs]


def _topo_order(descs: list[Mapping]) -> list[Mapping]:
    """Stable Kahn ordering: among ready nodes, earliest description first."""
    ids = [d["id"] for d in descs]
    remaining = list(range(len(descs)))
    placed: set[str] = set()
    order = []
    while remaining:
        for pos, i in enumerate(remaining):
            if all(u in placed for u in descs[i].get("inputs", ())):
                break
        else:
            stuck = ", ".join(ids[i] for i in remaining)
            raise GraphBuildError(f"cycle detected among nodes: {stuck}")
        order.append(descs[i])
        placed.add(ids[i])
        del remaining[pos]
    return order


def _init_spec(desc: Mapping, kind: str, rng: np.random.Generator, dtype) -> ConvSpec:
    ci, co = int(desc["in_channels"]), int(desc["out_channels"])
    if kind == "convtrans":
        k, s, p = int(desc.get("kernel", 2)), int(desc.get("stride", 2)), int(desc.get("padding", 0))
        shape = (ci, co, k, k)
    else:
        k = int(desc["kernel"])
        s, p = int(desc.get("stride", 1)), int(desc.get("padding", (k - 1) // 2))
        shape = (co, ci, k, k)
    fan_in = ci * k * k
    weight = desc.get("weight")
    if weight is None:
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    bias = desc.get("bias")
    if bias is None:
        bias = np.zeros(co)
    return ConvSpec(
        in_channels=ci,
        out_channels=co,
        kernel=k,
        stride=s,
        padding=p,
        weight=np.array(weight, dtype=dtype).reshape(shape),
        bias=np.array(bias, dtype=dtype).reshape(co),
        transposed=kind == "convtrans",
    )


_ARITY = {"input": (0, 0), "conv": (1, 1), "convtrans": (1, 1), "maxpool": (1, 1), "relu": (1, 1),
          "sigmoid": (1, 1), "output": (1, 1), "concat": (2, 2 ** 31)}


def graph_build(descs: Iterable[Mapping], *, seed: int = 0, precision: str = "double", config=None) -> LayerGraph:
    """Validate node descriptions and return a graph with inferred shapes.

    Each description is a mapping with ``id``, ``kind`` and ``inputs``; conv
    nodes add ``in_channels``, ``out_channels``, ``kernel`` and optionally
    ``stride``/``padding`` (and ``weight``/``bias`` to pin parameters); the
    input node carries ``shape`` as ``[C, H, W]``. Weights are He-initialised
    from ``seed`` in topological order. Any failure raises
    :class:`GraphBuildError` naming the node and nothing is returned.
    """
    descs = [dict(d) for d in descs]
    dtype = T.as_dtype(precision)
    seen: set[str] = set()
    for d in descs:
        if "id" not in d or "kind" not in d:
            raise GraphBuildError(f"node description missing id/kind: {d}")
        if d["id"] in seen:
            raise GraphBuildError(f"duplicate node id {d['id']!r}")
        seen.add(d["id"])
        if d["kind"] not in KINDS:
            raise GraphBuildError(f"node {d['id']!r}: unknown kind {d['kind']!r}")
        d["inputs"] = tuple(d.get("inputs", ()))
        lo, hi = _ARITY[d["kind"]]
        if not lo <= len(d["inputs"]) <= hi:
            raise GraphBuildError(f"node {d['id']!r}: kind {d['kind']} takes {lo}..{hi} inputs, got {len(d['inputs'])}")
    for d in descs:
        for u in d["inputs"]:
            if u not in seen:
                raise GraphBuildError(f"node {d['id']!r} references missing node {u!r}")
    kinds = [d["kind"] for d in descs]
    if kinds.count("input") != 1 or kinds.count("output") != 1:
        raise GraphBuildError("graph needs exactly one input node and one output node")

    ordered = _topo_order(descs)
    if ordered[0]["kind"] != "input":
        raise GraphBuildError(f"node {ordered[0]['id']!r} has no inputs but is not the input node")
    out_desc = next(d for d in ordered if d["kind"] == "output")
    if out_desc is not ordered[-1]:
        raise GraphBuildError(f"output node {out_desc['id']!r} must be the sink of the graph")
    if ordered[-1]["inputs"][0] == ordered[0]["id"]:
        raise GraphBuildError(f"output node {out_desc['id']!r} aliases the input; graph has no layers")

    rng = np.random.default_rng(seed)
    shapes: dict[str, tuple[int, int, int]] = {}
    nodes = []
    for d in ordered:
        nid, kind = d["id"], d["kind"]
        ins = [shapes[u] for u in d["inputs"]]
        spec = None
        try:
            if kind == "input":
                shape = tuple(int(v) for v in d["shape"])
                if len(shape) != 3 or min(shape) < 1:
                    raise GraphBuildError(f"input shape must be [C, H, W] with extents >= 1, got {d['shape']}")
            elif kind in PARAM_KINDS:
                spec = _init_spec(d, kind, rng, dtype)
                c, h, w = ins[0]
                if c != spec.in_channels:
                    raise T.ShapeError(f"receives {c} channels but declares in_channels={spec.in_channels}")
                shape = (spec.out_channels, spec.output_size(h), spec.output_size(w))
            elif kind == "maxpool":
                c, h, w = ins[0]
                if h % 2 or w % 2:
                    raise T.ShapeError(f"maxpool on odd extent {h}x{w}")
                shape = (c, h // 2, w // 2)
            elif kind == "concat":
                hw = {s[1:] for s in ins}
                if len(hw) != 1:
                    raise T.ShapeError(f"concat operands disagree spatially: {ins}")
                shape = (sum(s[0] for s in ins), *ins[0][1:])
            else:
                shape = ins[0]
        except (T.ShapeError, T.ConfigError, KeyError, TypeError) as exc:
            raise GraphBuildError(f"node {nid!r}: {exc}") from exc
        shapes[nid] = shape
        nodes.append(Node(nid, kind, d["inputs"], shape, spec, d.get("layer"), d.get("branch")))
    return LayerGraph(nodes, config=config)


@dataclass
class Trace:
    """Node outputs from one forward pass, plus max-pool argmax maps."""

    values: dict[str, np.ndarray]
    argmax: dict[str, np.ndarray]
    output: np.ndarray


def _eval_node(node: Node, args: list[np.ndarray]):
    k = node.kind
    if k == "conv":
        return T.conv2d_forward(args[0], node.spec), None
    if k == "convtrans":
        return T.convtrans2d_forward(args[0], node.spec), None
    if k == "maxpool":
        return T.maxpool2_forward(args[0])
    if k == "relu":
        return T.relu(args[0]), None
    if k == "sigmoid":
        return T.sigmoid(args[0]), None
    if k == "concat":
        return T.concat_channels(*args), None
    return args[0], None


def graph_forward(g: LayerGraph, x: np.ndarray, keep: bool = False):
    """Evaluate every node once in topological order.

    Returns the output array, or a :class:`Trace` with every node's value when
    ``keep`` is set (needed by :func:`graph_backward`). Intermediate values are
    dropped as soon as their last consumer has run when ``keep`` is off.
    """
    if x.ndim != 4 or tuple(x.shape[1:]) != g.input_node.out_shape:
        raise T.ShapeError(f"input shape {x.shape} does not match graph input [N, {g.input_node.out_shape}]")
    last_use: dict[str, int] = {}
    for i, node in enumerate(g.nodes):
        for u in node.inputs:
            last_use[u] = i
    values: dict[str, np.ndarray] = {g.input_node.id: x}
    argmax: dict[str, np.ndarray] = {}
    for i, node in enumerate(g.nodes[1:], start=1):
        out, am = _eval_node(node, [values[u] for u in node.inputs])
        values[node.id] = out
        if am is not None:
            argmax[node.id] = am
        if not keep:
            for u in node.inputs:
                if last_use[u] == i:
                    del values[u]
    final = values[g.output_node.id]
    if keep:
        return Trace(values, argmax, final)
    return final


def graph_backward(g: LayerGraph, trace: Trace, grad_out: np.ndarray, return_input_grad: bool = False):
    """Reverse-mode pass over the graph.

    Returns a list of ``(grad_w, grad_b)`` aligned with ``g.params``. Gradients
    reaching a node from several consumers are summed in reverse topological
    order of the consumers.
    """
    if grad_out.shape != trace.output.shape:
        raise T.ShapeError(f"grad_out shape {grad_out.shape} != output shape {trace.output.shape}")
    grads: dict[str, np.ndarray] = {g.output_node.id: grad_out}
    pgrads: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def push(nid, gval):
        if nid in grads:
            grads[nid] = grads[nid] + gval
        else:
            grads[nid] = gval

    for node in reversed(g.nodes[1:]):
        gy = grads.pop(node.id, None)
        if gy is None:
            continue
        ins = [trace.values[u] for u in node.inputs]
        k = node.kind
        if k == "conv":
            gx, gw, gb = T.conv2d_backward(ins[0], node.spec, gy)
            pgrads[node.id] = (gw, gb)
            push(node.inputs[0], gx)
        elif k == "convtrans":
            gx, gw, gb = T.convtrans2d_backward(ins[0], node.spec, gy)
            pgrads[node.id] = (gw, gb)
            push(node.inputs[0], gx)
        elif k == "maxpool":
            push(node.inputs[0], T.maxpool2_backward(gy, trace.argmax[node.id]))
        elif k == "relu":
            push(node.inputs[0], T.relu_backward(ins[0], gy))
        elif k == "sigmoid":
            push(node.inputs[0], T.sigmoid_backward(trace.values[node.id], gy))
        elif k == "concat":
            for u, part in zip(node.inputs, T.split_channels(gy, [a.shape[1] for a in ins])):
                push(u, part)
        else:
            push(node.inputs[0], gy)

    out = []
    for nid, w, b in g.params:
        if nid in pgrads:
            out.append(pgrads[nid])
        else:
            out.append((np.zeros_like(w), np.zeros_like(b)))
    if return_input_grad:
        gin = grads.get(g.input_node.id, np.zeros_like(trace.values[g.input_node.id]))
        return out, gin
    return out


def shape_table(g: LayerGraph) -> list[tuple[str, tuple[int, int, int]]]:
    return [(n.id, n.out_shape) for n in g.nodes]


def format_shape_table(rows) -> str:
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{nid:<{width}}  {'x'.join(str(v) for v in shp)}" for nid, shp in rows)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    checked: int
    tol: float
    kinks_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"max_rel_err={self.max_rel_err:.3e} worst={self.worst_param} checked={self.checked} "
                f"kinks_skipped={self.kinks_skipped} tol={self.tol:g} {verdict}")


REL_ERR_FLOOR = 1e-6


def rel_error(analytic: float, numeric: float, floor: float = REL_ERR_FLOOR) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    Below ``floor`` a central difference at h ~ 1e-5 is dominated by loss
    round-off (~1e-16 / h), so such gradients are compared in absolute terms.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _pattern(g: LayerGraph, trace: Trace) -> list[np.ndarray]:
    """Which side of every ReLU kink and which max-pool winner each element took."""
    pats = []
    for n in g.nodes:
        if n.kind == "relu":
            pats.append(trace.values[n.inputs[0]] > 0)
        elif n.kind == "maxpool":
            pats.append(trace.argmax[n.id])
    return pats


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(g: LayerGraph, x: np.ndarray, target: np.ndarray, h: float | None = None, tol: float = 1e-4,
               loss_fn=T.bce_loss, max_halvings: int = 3) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    Every element of every weight and bias is perturbed. When ``h`` is None the
    step is ``1e-5 * max(1, |theta|)`` per element. A difference quotient is
    only meaningful if neither perturbed pass crosses a ReLU kink or changes a
    max-pool winner; when one does, the step is divided by 10 (up to
    ``max_halvings`` times) and the element is skipped and counted in
    ``kinks_skipped`` if the crossing persists. Needs a float64 graph.
    """
    if g.dtype != np.float64:
        raise T.ConfigError("grad_check requires a double-precision graph")
    trace = graph_forward(g, x, keep=True)
    base = _pattern(g, trace)
    _, gl = loss_fn(trace.output, target)
    analytic = graph_backward(g, trace, gl)

    def probe():
        tr = graph_forward(g, x, keep=True)
        return loss_fn(tr.output, target)[0], _same(base, _pattern(g, tr))

    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for (nid, w, b), (gw, gb) in zip(g.params, analytic):
        for pname, arr, garr in (("weight", w, gw), ("bias", b, gb)):
            flat, gflat = arr.reshape(-1), garr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                step = h if h is not None else 1e-5 * max(1.0, abs(orig))
                numeric = None
                for _ in range(max_halvings + 1):
                    flat[i] = orig + step
                    lp, okp = probe()
                    flat[i] = orig - step
                    lm, okm = probe()
                    flat[i] = orig
                    if okp and okm:
                        numeric = (lp - lm) / (2 * step)
                        break
                    step /= 10
                if numeric is None:
                    skipped += 1
                    continue
                err = rel_error(gflat[i], numeric)
                checked += 1
                if err > worst or not worst_name:
                    worst, worst_name = err, f"{nid}.{pname}[{i}]"
    return GradCheckReport(worst, worst_name, checked, tol, skipped)


def randomize_biases(g: LayerGraph, seed: int = 0, scale: float = 0.1) -> None:
    """Give every bias a small random value.

    Zero biases put whole channels exactly on a ReLU kink wherever the input is
    zero, which makes finite differences meaningless there.
    """
    rng = np.random.default_rng(seed)
    for _, _, b in g.params:
        b[:] = rng.normal(0.0, scale, size=b.shape)
