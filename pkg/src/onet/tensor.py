"""Primitive layer kernels with explicit forward and backward passes.

Activations are plain numpy arrays laid out N x C x H x W, in float64 or
float32 (the dtype of the input decides the dtype of the result). Every
function here is pure: caches needed by a backward pass (the max-pool argmax
map) are returned explicitly rather than stored.

Convolutions are computed as a sum over kernel offsets of channel
contractions, which keeps peak memory at the size of one shifted input view
and fixes the floating-point reduction order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BCE_EPS = 1e-7

DTYPES = {"double": np.float64, "single": np.float32}


class ShapeError(ValueError):
    """Raised when an operand's extents do not fit the operation."""


class ConfigError(ValueError):
    """Raised for a layer specification this framework does not build."""


def as_dtype(precision: str):
    try:
        return DTYPES[precision]
    except KeyError:
        raise ConfigError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}") from None


def _check_rank4(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")


@dataclass
class ConvSpec:
    """Square convolution parameters.

    ``weight`` is ``[out, in, k, k]`` for a regular convolution and
    ``[in, out, k, k]`` for a transposed one (the usual convention, which makes
    the transposed convolution the exact adjoint of the regular one sharing the
    same array).
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    weight: np.ndarray
    bias: np.ndarray
    transposed: bool = False

    def __post_init__(self):
        if self.transposed:
            expected = (self.in_channels, self.out_channels, self.kernel, self.kernel)
        else:
            expected = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.weight.shape != expected:
            raise ConfigError(f"weight shape {self.weight.shape} != expected {expected}")
        if self.bias.shape != (self.out_channels,):
            raise ConfigError(f"bias shape {self.bias.shape} != ({self.out_channels},)")
        if self.stride < 1 or self.padding < 0 or self.kernel < 1:
            raise ConfigError(f"invalid kernel/stride/padding {self.kernel}/{self.stride}/{self.padding}")
        if self.transposed and (self.kernel, self.stride, self.padding) != (2, 2, 0):
            raise ConfigError(
                "transposed convolution must be k=2, s=2, p=0 (exact doubling), got "
                f"k={self.kernel}, s={self.stride}, p={self.padding}"
            )

    def output_size(self, size: int) -> int:
        if self.transposed:
            return 2 * size
        span = size + 2 * self.padding - self.kernel
        if span < 0 or span % self.stride:
            raise ShapeError(
                f"input extent {size} with k={self.kernel}, s={self.stride}, p={self.padding} "
                "does not give an exact integer output size >= 1"
            )
        return span // self.stride + 1


def conv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    _check_rank4(x, "conv2d input")
    n, ci, h, w = x.shape
    if ci != spec.in_channels:
        raise ShapeError(f"conv2d input has {ci} channels, spec expects {spec.in_channels}")
    ho, wo = spec.output_size(h), spec.output_size(w)
    k, s, p = spec.kernel, spec.stride, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((spec.out_channels, n, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            view = xp[:, :, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
            out += np.tensordot(spec.weight[:, :, ky, kx], view, axes=([1], [1]))
    out += spec.bias.astype(x.dtype, copy=False)[:, None, None, None]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Return ``(grad_in, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    _check_rank4(x, "conv2d input")
    n, ci, h, w = x.shape
    ho, wo = spec.output_size(h), spec.output_size(w)
    if grad_out.shape != (n, spec.out_channels, ho, wo):
        raise ShapeError(f"conv2d grad_out shape {grad_out.shape} != forward output {(n, spec.out_channels, ho, wo)}")
    k, s, p = spec.kernel, spec.stride, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    gxp = np.zeros(xp.shape, dtype=x.dtype)
    gw = np.zeros(spec.weight.shape, dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            ys = slice(ky, ky + s * (ho - 1) + 1, s)
            xs = slice(kx, kx + s * (wo - 1) + 1, s)
            gw[:, :, ky, kx] = np.tensordot(grad_out, xp[:, :, ys, xs], axes=([0, 2, 3], [0, 2, 3]))
            gxp[:, :, ys, xs] += np.tensordot(spec.weight[:, :, ky, kx], grad_out, axes=([0], [1])).transpose(1, 0, 2, 3)
    gb = grad_out.sum(axis=(0, 2, 3))
    gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
    return np.ascontiguousarray(gx), gw, gb


def convtrans2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    _check_rank4(x, "convtrans2d input")
    if not spec.transposed:
        raise ConfigError("convtrans2d_forward needs a transposed spec")
    n, ci, h, w = x.shape
    if ci != spec.in_channels:
        raise ShapeError(f"convtrans2d input has {ci} channels, spec expects {spec.in_channels}")
    out = np.empty((n, spec.out_channels, 2 * h, 2 * w), dtype=x.dtype)
    bias = spec.bias.astype(x.dtype, copy=False)[None, :, None, None]
    for ky in range(2):
        for kx in range(2):
            part = np.tensordot(spec.weight[:, :, ky, kx], x, axes=([0], [1])).transpose(1, 0, 2, 3)
            out[:, :, ky::2, kx::2] = part + bias
    return out


def convtrans2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Return ``(grad_in, grad_w, grad_b)`` for :func:`convtrans2d_forward`."""
    _check_rank4(x, "convtrans2d input")
    n, ci, h, w = x.shape
    if grad_out.shape != (n, spec.out_channels, 2 * h, 2 * w):
        raise ShapeError(
            f"convtrans2d grad_out shape {grad_out.shape} != forward output {(n, spec.out_channels, 2 * h, 2 * w)}"
        )
    gx = np.zeros(x.shape, dtype=x.dtype)
    gw = np.zeros(spec.weight.shape, dtype=x.dtype)
    for ky in range(2):
        for kx in range(2):
            g = grad_out[:, :, ky::2, kx::2]
            gx += np.tensordot(spec.weight[:, :, ky, kx], g, axes=([1], [1])).transpose(1, 0, 2, 3)
            gw[:, :, ky, kx] = np.tensordot(x, g, axes=([0, 2, 3], [0, 2, 3]))
    gb = grad_out.sum(axis=(0, 2, 3))
    return gx, gw, gb


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling with stride 2.

    Returns ``(out, argmax)`` where ``argmax`` holds the winning position inside
    each window as a row-major index 0..3; ties go to the smallest index.
    """
    _check_rank4(x, "maxpool input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even spatial extents, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, argmax[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, argmax


def maxpool2_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"maxpool grad_out shape {grad_out.shape} != argmax shape {argmax.shape}")
    n, c, ho, wo = grad_out.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    return win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward of :func:`sigmoid` given its *output*."""
    return out * (1 - out) * grad_out


def concat_channels(*xs: np.ndarray) -> np.ndarray:
    if len(xs) < 2:
        raise ShapeError("concat needs at least two inputs")
    for x in xs:
        _check_rank4(x, "concat input")
    ref = xs[0].shape
    for x in xs[1:]:
        if (x.shape[0], x.shape[2], x.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat operands disagree on N/H/W: {ref} vs {x.shape}")
    return np.concatenate(xs, axis=1)


def split_channels(grad: np.ndarray, sizes) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels` along the channel axis."""
    if sum(sizes) != grad.shape[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {grad.shape[1]} channels")
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad, bounds, axis=1)]


def bce_loss(prob: np.ndarray, target: np.ndarray, pos_weight: float | None = None):
    """Mean binary cross-entropy and its gradient with respect to ``prob``.

    Probabilities are clamped to ``[BCE_EPS, 1 - BCE_EPS]`` and the gradient is
    taken at the clamped values. ``pos_weight`` scales the positive-class term.
    """
    if prob.shape != target.shape:
        raise ShapeError(f"prob shape {prob.shape} != target shape {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("bce target must be binary (0/1)")
    p = np.clip(prob, BCE_EPS, 1 - BCE_EPS)
    t = target.astype(p.dtype, copy=False)
    wpos = 1.0 if pos_weight is None else float(pos_weight)
    count = p.size
    loss = -float(np.mean(wpos * t * np.log(p) + (1 - t) * np.log1p(-p)))
    grad = (-wpos * t / p + (1 - t) / (1 - p)) / count
    return loss, grad.astype(prob.dtype, copy=False)
