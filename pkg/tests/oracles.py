"""Independent reference implementations used only by the tests.

Nothing here calls into the kernels it checks: convolutions are direct sums
over explicit windows, pooling scans windows in Python, and gradients come
from central differences.
"""

import numpy as np


def naive_conv2d(x, w, b, stride, pad):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for c in range(ci):
                        for ky in range(k):
                            iy = y * stride - pad + ky
                            if not 0 <= iy < h:
                                continue
                            for kx in range(k):
                                ix = xx * stride - pad + kx
                                if 0 <= ix < wd:
                                    acc += w[o, c, ky, kx] * x[bi, c, iy, ix]
                    out[bi, o, y, xx] = acc
    return out


def window_conv2d(x, w, b, stride, pad):
    """Direct summation per output pixel over the zero-padded window.

    Same definition as :func:`naive_conv2d`, vectorised only inside one window
    so it stays fast enough for many random shapes.
    """
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.empty((n, co, ho, wo))
    for y in range(ho):
        for xx in range(wo):
            win = xp[:, :, y * stride:y * stride + k, xx * stride:xx * stride + k]
            out[:, :, y, xx] = np.einsum("ncij,ocij->no", win, w) + b
    return out


def naive_convtrans2d(x, w, b):
    """Scatter form: every input pixel stamps ``v * w[ci, co]`` onto a 2x2 block."""
    n, ci, h, wd = x.shape
    co = w.shape[1]
    out = np.zeros((n, co, 2 * h, 2 * wd)) + b[None, :, None, None]
    for bi in range(n):
        for c in range(ci):
            for y in range(h):
                for xx in range(wd):
                    out[bi, :, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2] += x[bi, c, y, xx] * w[c]
    return out


def naive_maxpool2(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2))
    arg = np.empty((n, c, h // 2, w // 2), dtype=int)
    for bi in range(n):
        for ch in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    best, besti = None, None
                    for i, (dy, dx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                        v = x[bi, ch, 2 * y + dy, 2 * xx + dx]
                        if best is None or v > best:
                            best, besti = v, i
                    out[bi, ch, y, xx] = best
                    arg[bi, ch, y, xx] = besti
    return out, arg


def numeric_grad(f, arr, h=None):
    """Central differences of scalar ``f()`` w.r.t. every element of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h if h is not None else 1e-5 * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def max_rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def scalar_adam(theta, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook scalar ADAM in plain Python floats; returns the trajectory."""
    m = v = 0.0
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (vhat ** 0.5 + eps)
        traj.append(theta)
    return traj


def blob_fixture(n=8, size=64, seed=0, radius=(0.15, 0.25), contrast=0.6):
    """Synthetic images of bright disks on a textured background, with masks."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images, masks = [], []
    for _ in range(n):
        img = 0.25 + 0.05 * rng.standard_normal((size, size))
        mask = np.zeros((size, size))
        for _ in range(rng.integers(1, 3)):
            r = rng.uniform(size * radius[0], size * radius[1])
            cy, cx = rng.uniform(r + 2, size - r - 2, size=2)
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            mask[disk] = 1
        img = img + contrast * mask
        images.append(np.clip(img, 0, 1))
        masks.append(mask)
    return np.stack(images)[:, None], np.stack(masks)[:, None]
