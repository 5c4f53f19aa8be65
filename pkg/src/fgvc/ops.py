"""Dense float64 numerics with hand-derived backward passes.

Arrays are channels-last. Every spatial op accepts a single image
``(H, W, C)`` or a batch ``(N, H, W, C)`` and returns the matching rank.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidLabelError, InvalidShapeError


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidShapeError(f"expected (H, W, C) or (N, H, W, C), got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_conv(x: np.ndarray, kernels: np.ndarray, stride: int, pad: int) -> None:
    if kernels.ndim != 4:
        raise InvalidShapeError(f"kernels must be (Kh, Kw, Cin, Cout), got {kernels.shape}")
    if stride < 1 or pad < 0:
        raise InvalidShapeError(f"invalid stride={stride} / pad={pad}")
    kh, kw, cin, _ = kernels.shape
    if x.shape[-1] != cin:
        raise InvalidShapeError(
            f"input has {x.shape[-1]} channels but kernels expect {cin}"
        )
    h, w = x.shape[1], x.shape[2]
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise InvalidShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (pad={pad})")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, Ho, Wo, Cin, Kh, Kw) strided view; no copy
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d(x, kernels, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding.

    ``out[n, i, j, o] = sum_{a, b, c} xpad[n, i*stride + a, j*stride + b, c] * k[a, b, c, o]``
    """
    xb, single = _as_batch(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    _check_conv(xb, kernels, stride, pad)
    kh, kw = kernels.shape[:2]
    ho = conv_output_size(xb.shape[1], kh, stride, pad)
    wo = conv_output_size(xb.shape[2], kw, stride, pad)
    xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xb
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, kernels, axes=([4, 5, 3], [0, 1, 2]))
    return out[0] if single else out


def conv2d_backward(grad_out, x, kernels, stride: int = 1, pad: int = 0):
    """Gradients of :func:`conv2d` w.r.t. its input and kernels."""
    xb, single = _as_batch(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    _check_conv(xb, kernels, stride, pad)
    g = np.asarray(grad_out, dtype=np.float64)
    if single:
        g = g[None]
    kh, kw, cin, cout = kernels.shape
    n, h, w, _ = xb.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if g.shape != (n, ho, wo, cout):
        raise InvalidShapeError(f"grad_out shape {g.shape} != expected {(n, ho, wo, cout)}")

    xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xb
    win = _windows(xp, kh, kw, stride, ho, wo)
    # (Cin, Kh, Kw, Cout) -> (Kh, Kw, Cin, Cout)
    grad_k = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)

    gxp = np.zeros_like(xp)
    for a in range(kh):
        for b in range(kw):
            gxp[:, a : a + stride * (ho - 1) + 1 : stride, b : b + stride * (wo - 1) + 1 : stride, :] += (
                g @ kernels[a, b].T
            )
    grad_x = gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp
    if single:
        grad_x = grad_x[0]
    return np.ascontiguousarray(grad_x), np.ascontiguousarray(grad_k)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, pre):
    return np.where(pre > 0, grad_out, 0.0)


def global_avg_pool(x) -> np.ndarray:
    """Spatial mean: ``(H, W, C) -> (C,)`` or ``(N, H, W, C) -> (N, C)``."""
    xb, single = _as_batch(x)
    out = xb.mean(axis=(1, 2))
    return out[0] if single else out


def global_avg_pool_backward(grad_out, shape) -> np.ndarray:
    h, w = shape[-3], shape[-2]
    g = np.asarray(grad_out, dtype=np.float64) / (h * w)
    return np.broadcast_to(g[..., None, None, :], shape).copy()


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Stable ``-log softmax(logits)[label]`` and its gradient.

    Works on ``(K,)`` with an int label or ``(N, K)`` with ``N`` labels; the
    batched form returns per-row losses.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    labels = np.atleast_1d(np.asarray(label))
    k = zb.shape[1]
    if labels.shape != (zb.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidLabelError(f"labels {label!r} do not match logits shape {z.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidLabelError(f"label out of range [0, {k}): {label!r}")

    shifted = zb - zb.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(zb.shape[0])
    loss = logsum - shifted[rows, labels]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, labels] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def _resize_axis(size_in: int, size_out: int):
    # align_corners=False source coordinates, clamped at the borders
    src = (np.arange(size_out, dtype=np.float64) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, size_in - 1)
    return i0, i1, src - i0


def bilinear_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation with half-pixel centres (align_corners=False)."""
    if out_h < 1 or out_w < 1:
        raise InvalidShapeError(f"output size must be positive, got {out_h}x{out_w}")
    xb, single = _as_batch(img)
    _, h, w, _ = xb.shape
    if h < 1 or w < 1:
        raise InvalidShapeError(f"input has empty spatial dims {h}x{w}")
    y0, y1, wy = _resize_axis(h, out_h)
    x0, x1, wx = _resize_axis(w, out_w)
    wy = wy[None, :, None, None]
    wx = wx[None, None, :, None]
    top = xb[:, y0][:, :, x0] * (1 - wx) + xb[:, y0][:, :, x1] * wx
    bot = xb[:, y1][:, :, x0] * (1 - wx) + xb[:, y1][:, :, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[0] if single else out


def nearest_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize: ``out[i, j] = img[floor(i*H/out_h), floor(j*W/out_w)]``."""
    a = np.asarray(img)
    h, w = a.shape[0], a.shape[1]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return a[rows][:, cols]


def glorot_uniform(rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(shape, -limit, limit)
