"""ADAM and the mini-batch training loop with loss-plateau early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .graph import LayerGraph, graph_backward, graph_forward

log = logging.getLogger(__name__)


class RegistryMismatch(ValueError):
    """Gradients or stored state do not line up with the parameter registry."""


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> AdamState:
    """One bias-corrected ADAM update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise RegistryMismatch(
            f"registry sizes differ: params={len(params)} grads={len(grads)} moments={len(state.m)}"
        )
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise RegistryMismatch(f"entry {i}: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass
class TrainConfig:
    max_epochs: int = 50
    max_steps: int | None = None
    batch_size: int = 4
    stop_delta: float = 1e-3  # 0 disables early stopping
    seed: int = 0
    augment: int = 0
    precision: str = "double"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pos_weight: float | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stop_delta < 0:
            raise ValueError(f"stop_delta must be >= 0, got {self.stop_delta}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    stopped_early: bool
    steps: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def stopped_early(self) -> bool:
        return bool(self.records) and self.records[-1].stopped_early

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        with open(path, encoding="utf-8") as fh:
            return cls([EpochRecord(**json.loads(line)) for line in fh if line.strip()])


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(g: LayerGraph, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
          state: AdamState | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          on_batch: Callable[[int, np.ndarray], None] | None = None) -> tuple[AdamState, TrainLog]:
    """Fit ``g`` to ``(inputs, targets)`` with ADAM on mean pixel BCE.

    Each epoch visits every sample once in a seeded per-epoch shuffle, in
    batches of ``cfg.batch_size`` (the last batch may be short). Training ends
    after ``max_epochs``, after ``max_steps`` optimizer steps, or once two
    consecutive epoch mean losses differ by less than ``stop_delta``.
    Parameters are updated in place; the optimizer state and the log are
    returned.
    """
    cfg.validate()
    n = len(inputs)
    if n == 0:
        raise ValueError("training set is empty")
    if len(targets) != n:
        raise T.ShapeError(f"{n} inputs but {len(targets)} targets")
    expect = (1, *g.input_node.out_shape[1:])
    if tuple(inputs.shape[1:]) != g.input_node.out_shape or tuple(targets.shape[1:]) != expect:
        raise T.ShapeError(
            f"samples {inputs.shape[1:]} / targets {targets.shape[1:]} do not match graph input {g.input_node.out_shape}"
        )
    dtype = g.dtype
    inputs = inputs.astype(dtype, copy=False)
    targets = targets.astype(dtype, copy=False)
    params = g.param_arrays()
    if state is None:
        state = AdamState.zeros_like(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    trainlog = TrainLog()
    prev = None
    steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = epoch_permutation(cfg.seed, epoch, n)
        total, seen = 0.0, 0
        capped = False
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if on_batch is not None:
                on_batch(epoch, idx)
            trace = graph_forward(g, inputs[idx], keep=True)
            loss, gl = T.bce_loss(trace.output, targets[idx], cfg.pos_weight)
            grads = [a for pair in graph_backward(g, trace, gl) for a in pair]
            adam_step(state, params, grads)
            total += loss * len(idx)
            seen += len(idx)
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                capped = True
                break
        mean = total / seen
        stop = epoch >= 2 and prev is not None and abs(mean - prev) < cfg.stop_delta
        rec = EpochRecord(epoch, mean, time.perf_counter() - t0, stop, steps)
        trainlog.records.append(rec)
        log.debug("epoch %d loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(rec)
        if stop or capped:
            break
        prev = mean
    return state, trainlog
