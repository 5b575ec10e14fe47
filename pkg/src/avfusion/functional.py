"""Layer primitives built on :mod:`avfusion.tensor`.

Convolution and pooling are written once for any number of spatial axes
(im2col gathered one kernel tap at a time, then a single GEMM) and exposed as the
2-D and 3-D variants the networks use.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, concat, make_result, matmul, mean, relu, sigmoid, softmax, stack, tanh


class ShapeError(ValueError):
    """Operand extents are incompatible with the requested operation."""


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(e) for e in v)
    if len(v) != n:
        raise ShapeError(f"expected {n} values, got {v}")
    return v


def output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_window(spatial, kernel, stride, padding, op: str) -> tuple[int, ...]:
    if any(s < 1 for s in stride):
        raise ShapeError(f"{op}: strides must be >= 1, got {stride}")
    if any(p < 0 for p in padding):
        raise ShapeError(f"{op}: padding must be >= 0, got {padding}")
    out = []
    for axis, (n, k, s, p) in enumerate(zip(spatial, kernel, stride, padding)):
        if k > n + 2 * p:
            raise ShapeError(f"{op}: kernel extent {k} exceeds padded input extent {n + 2 * p} on spatial axis {axis}")
        out.append(output_extent(n, k, s, p))
    return tuple(out)


def _pad(x: np.ndarray, padding: Sequence[int], value: float = 0.0) -> np.ndarray:
    if not any(padding):
        return x
    widths = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    return np.pad(x, widths, mode="constant", constant_values=value)


def _offset_slices(offset, stride, out_shape):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_shape))


def conv_nd(x, w, b=None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation; x (N, C, *S), w (K, C, *k), b (K,)."""
    x, w = as_tensor(x), as_tensor(w)
    nd = x.ndim - 2
    if nd < 1 or w.ndim != nd + 2:
        raise ShapeError(f"conv: input {x.shape} and weight {w.shape} ranks do not match")
    n, c = x.shape[:2]
    k_out, c_w = w.shape[:2]
    if c != c_w:
        raise ShapeError(f"conv: input has {c} channels but weight expects {c_w}")
    kernel = w.shape[2:]
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    out_shape = _check_window(x.shape[2:], kernel, stride, padding, "conv")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (k_out,):
            raise ShapeError(f"conv: bias shape {b.shape} != ({k_out},)")

    n_taps = int(np.prod(kernel))
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    xp = _pad(x.data, padding)
    # cols: (C, taps, N, *out) flattened to (C * taps, N * out)
    cols = np.empty((c, n_taps, n) + out_shape)
    for t, off in enumerate(offsets):
        cols[:, t] = xp[(slice(None), slice(None)) + _offset_slices(off, stride, out_shape)].swapaxes(0, 1)
    cols = cols.reshape(c * n_taps, -1)
    wmat = w.data.reshape(k_out, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape((k_out, n) + out_shape).swapaxes(0, 1))

    def backward(g):
        g2 = g.swapaxes(0, 1).reshape(k_out, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape((c, n_taps, n) + out_shape)
            gxp = np.zeros(xp.shape)
            for t, off in enumerate(offsets):
                gxp[(slice(None), slice(None)) + _offset_slices(off, stride, out_shape)] += dcols[:, t].swapaxes(0, 1)
            inner = tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
            gx = gxp[(slice(None), slice(None)) + inner]
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    if as_tensor(x).ndim != 4:
        raise ShapeError(f"conv2d expects (N, C, H, W), got {as_tensor(x).shape}")
    return conv_nd(x, w, b, stride, padding)


def conv3d(x, w, b=None, stride=1, padding=0) -> Tensor:
    if as_tensor(x).ndim != 5:
        raise ShapeError(f"conv3d expects (N, C, T, H, W), got {as_tensor(x).shape}")
    return conv_nd(x, w, b, stride, padding)


def max_pool_nd(x, kernel, stride=None, padding=0) -> Tensor:
    """Window maximum; gradient goes to the first maximal element in scan order."""
    x = as_tensor(x)
    nd = x.ndim - 2
    kernel = _tuple(kernel, nd)
    stride = kernel if stride is None else _tuple(stride, nd)
    padding = _tuple(padding, nd)
    out_shape = _check_window(x.shape[2:], kernel, stride, padding, "max_pool")
    xp = _pad(x.data, padding, -np.inf)
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    lead = (slice(None), slice(None))
    out = xp[lead + _offset_slices(offsets[0], stride, out_shape)].copy()
    arg = np.zeros(out.shape, dtype=np.intp)
    for t, off in enumerate(offsets[1:], 1):
        v = xp[lead + _offset_slices(off, stride, out_shape)]
        better = v > out  # strict: ties keep the earlier tap
        out[better] = v[better]
        arg[better] = t

    def backward(g):
        gxp = np.zeros(xp.shape)
        for t, off in enumerate(offsets):
            hit = arg == t
            if hit.any():
                gxp[lead + _offset_slices(off, stride, out_shape)] += np.where(hit, g, 0.0)
        inner = tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
        return (gxp[lead + inner],)

    return make_result(out, (x,), backward)


def maxpool2d(x, kernel=2, stride=None, padding=0) -> Tensor:
    return max_pool_nd(x, kernel, stride, padding)


def maxpool3d(x, kernel=(3, 3, 3), stride=(1, 2, 2), padding=(1, 1, 1)) -> Tensor:
    return max_pool_nd(x, kernel, stride, padding)


def adaptive_avg_pool3d(x, out=(1, 1, 1)) -> Tensor:
    """Average over adaptive bins; bin i spans [floor(i*L/o), ceil((i+1)*L/o))."""
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeError(f"adaptive_avg_pool3d expects (N, C, T, H, W), got {x.shape}")
    out = _tuple(out, 3)
    if out == (1, 1, 1):
        return mean(x, axis=(2, 3, 4), keepdims=True)
    cells = []
    for it, ih, iw in itertools.product(*(range(o) for o in out)):
        sl = [slice(None), slice(None)]
        for i, o, size in zip((it, ih, iw), out, x.shape[2:]):
            sl.append(slice((i * size) // o, -(-((i + 1) * size) // o)))
        cells.append(mean(x[tuple(sl)], axis=(2, 3, 4)))
    return stack(cells, axis=-1).reshape(x.shape[:2] + out)


def linear(x, w, b=None) -> Tensor:
    """x (N, F) @ w (F, G) + b (G,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: cannot map {x.shape} through weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else y + b


def channel_attention(x, w1, b1, w2, b2) -> Tensor:
    """Squeeze-excitation gate: x * sigmoid(relu(gap(x) @ w1 + b1) @ w2 + b2).

    ``x`` is (N, C, ...); ``w1`` is (C, C // r) and ``w2`` is (C // r, C).
    """
    x, w1, w2 = as_tensor(x), as_tensor(w1), as_tensor(w2)
    c = x.shape[1]
    if w1.shape[0] != c or w2.shape != (w1.shape[1], c):
        raise ShapeError(f"channel_attention: weights {w1.shape}, {w2.shape} do not fit {c} channels")
    axes = tuple(range(2, x.ndim))
    squeezed = mean(x, axis=axes)
    gate = sigmoid(linear(relu(linear(squeezed, w1, b1)), w2, b2))
    return x * gate.reshape(gate.shape + (1,) * len(axes))


def temporal_attention(x, u, v, return_weights: bool = False):
    """Additive attention pooling over the last axis.

    x is (N, C, T). Scores ``v . tanh(u^T x_t)`` are softmax-normalised
    over T and the frames are summed with those weights, giving (N, C).
    """
    x, u, v = as_tensor(x), as_tensor(u), as_tensor(v)
    n, c, t = x.shape
    if u.shape[0] != c or v.shape != (u.shape[1],):
        raise ShapeError(f"temporal_attention: u {u.shape} / v {v.shape} do not fit {c} channels")
    frames = x.transpose(0, 2, 1).reshape(n * t, c)
    hidden = tanh(matmul(frames, u))
    scores = matmul(hidden, v.reshape(-1, 1)).reshape(n, t)
    weights = softmax(scores, axis=1)
    pooled = (x * weights.reshape(n, 1, t)).sum(axis=2)
    return (pooled, weights) if return_weights else pooled


def lstm(x, w_ih, w_hh, b) -> Tensor:
    """Single-layer LSTM over x (N, T, F); returns the last hidden state (N, H).

    Gate order in the packed weights is input, forget, cell, output.
    """
    x, w_ih, w_hh = as_tensor(x), as_tensor(w_ih), as_tensor(w_hh)
    n, t, f = x.shape
    hsize = w_hh.shape[0]
    if w_ih.shape != (f, 4 * hsize) or w_hh.shape != (hsize, 4 * hsize):
        raise ShapeError(f"lstm: weights {w_ih.shape}, {w_hh.shape} do not fit input {x.shape}")
    h = Tensor._wrap(np.zeros((n, hsize)))
    cell = Tensor._wrap(np.zeros((n, hsize)))
    for step in range(t):
        z = matmul(x[:, step, :], w_ih) + matmul(h, w_hh) + b
        i = sigmoid(z[:, :hsize])
        fg = sigmoid(z[:, hsize : 2 * hsize])
        g = tanh(z[:, 2 * hsize : 3 * hsize])
        o = sigmoid(z[:, 3 * hsize :])
        cell = fg * cell + i * g
        h = o * tanh(cell)
    return h


__all__ = [
    "ShapeError",
    "adaptive_avg_pool3d",
    "channel_attention",
    "concat",
    "conv2d",
    "conv3d",
    "conv_nd",
    "linear",
    "lstm",
    "max_pool_nd",
    "maxpool2d",
    "maxpool3d",
    "output_extent",
    "relu",
    "sigmoid",
    "softmax",
    "temporal_attention",
]
