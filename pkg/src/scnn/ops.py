"""Dense-array primitives: correlation, its adjoint, pooling and unpooling.

Everything in this module is a pure function on numpy arrays.  The 2-D
single-matrix operations define the numerical contract; the batched
variants (``conv_forward`` / ``conv_backward``) apply the same arithmetic
over (N, C, H, W) stacks and are what the network layer code calls.

Pooling operations accept any number of leading axes, so the same code
path serves both the single-matrix contract and batched training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def set_default_dtype(dtype) -> None:
    """Select the global working precision (float32 or float64).

    Affects freshly created arrays (dataset loading, parameter init).
    Verification and finite-difference oracles always run in float64.
    """
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def rot180(m: np.ndarray) -> np.ndarray:
    """Flip a matrix horizontally and vertically: out[i, j] = m[H-1-i, W-1-j]."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"rot180 expects a 2-D matrix, got shape {m.shape}")
    return np.ascontiguousarray(m[::-1, ::-1])


def xcorr_valid(
    x: np.ndarray,
    k: np.ndarray,
    pad: tuple[int, int, int, int] = (0, 0, 0, 0),
    stride: int = 1,
) -> np.ndarray:
    """Valid cross-correlation of a padded matrix with a kernel.

    out[i, j] = sum_{u,v} x_padded[i*stride + u, j*stride + v] * k[u, v]

    ``pad`` is (top, bottom, left, right).  Output dims are
    floor((dim + pads - kdim) / stride) + 1.
    """
    x = np.asarray(x)
    k = np.asarray(k)
    if x.ndim != 2 or k.ndim != 2:
        raise ShapeError("xcorr_valid expects 2-D operands")
    if stride < 1:
        raise ValueError("stride must be positive")
    pt, pb, pl, pr = pad
    if min(pt, pb, pl, pr) < 0:
        raise ValueError("padding must be non-negative")
    xp = np.pad(x, ((pt, pb), (pl, pr)))
    if xp.shape[0] < k.shape[0] or xp.shape[1] < k.shape[1]:
        raise ShapeError(
            f"kernel {k.shape} larger than padded input {xp.shape}"
        )
    win = sliding_window_view(xp, k.shape)[::stride, ::stride]
    return np.tensordot(win, k, axes=([2, 3], [0, 1]))


def backprop_input(delta: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of unpadded stride-1 ``xcorr_valid`` with respect to its input.

    Full-mode correlation of ``delta`` (zero-padded by k-1 on every side)
    with the 180-degree rotated kernel.  Output shape is
    delta.shape + k.shape - 1 per dimension, and for all conforming x:

        <xcorr_valid(x, k), delta> == <x, backprop_input(delta, k)>
    """
    delta = np.asarray(delta)
    k = np.asarray(k)
    if delta.ndim != 2 or k.ndim != 2:
        raise ShapeError("backprop_input expects 2-D operands")
    kh, kw = k.shape
    return xcorr_valid(delta, rot180(k), pad=(kh - 1, kh - 1, kw - 1, kw - 1))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-shaped arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def pool_output_dim(size: int, window: int, stride: int, ceil_mode: bool) -> int:
    """Pooled extent along one axis.

    Floor mode requires the window to fit; ceil mode allows windows
    truncated at the far edge but every window must start in bounds.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if ceil_mode:
        out = -((size - window) // -stride) + 1
        if (out - 1) * stride >= size:
            out -= 1
        return out
    if size < window:
        raise ShapeError(
            f"pooling window {window} larger than input extent {size} with ceil_mode off"
        )
    return (size - window) // stride + 1


@dataclass(frozen=True)
class PoolingRouteMap:
    """Backward-routing record produced by ``pool_forward``.

    For max mode, ``coords`` holds the input (row, col) of the selected
    element per output cell (first maximum in row-major order on ties).
    For average mode, ``areas`` holds the in-bounds window cell count per
    output cell.  ``out_hw`` is the pooled spatial shape.
    """

    mode: str
    out_hw: tuple[int, int]
    coords: np.ndarray | None = None
    areas: np.ndarray | None = None


def pool_forward(
    m: np.ndarray,
    window: int,
    stride: int,
    mode: str = "max",
    ceil_mode: bool = False,
) -> tuple[np.ndarray, PoolingRouteMap]:
    """Max or average pooling over the trailing two axes.

    Ceil-mode windows truncated at the right/bottom edge take the max
    over in-bounds cells only; averages divide by the in-bounds count.
    Leading axes (batch, channels) are carried through unchanged.
    """
    m = np.asarray(m)
    if m.ndim < 2:
        raise ShapeError("pool_forward expects at least 2 dims")
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    h, w = m.shape[-2:]
    oh = pool_output_dim(h, window, stride, ceil_mode)
    ow = pool_output_dim(w, window, stride, ceil_mode)
    pad_h = max(0, (oh - 1) * stride + window - h)
    pad_w = max(0, (ow - 1) * stride + window - w)
    fill = -np.inf if mode == "max" else 0.0
    pad_spec = [(0, 0)] * (m.ndim - 2) + [(0, pad_h), (0, pad_w)]
    mp = np.pad(m, pad_spec, constant_values=fill) if (pad_h or pad_w) else m
    win = sliding_window_view(mp, (window, window), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :][..., :oh, :ow, :, :]

    if mode == "max":
        flat = win.reshape(win.shape[:-2] + (window * window,))
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        rows = idx // window + (np.arange(oh) * stride)[:, None]
        cols = idx % window + (np.arange(ow) * stride)[None, :]
        coords = np.stack([rows, cols], axis=-1)
        return out, PoolingRouteMap(mode="max", out_hw=(oh, ow), coords=coords)

    row_ext = np.minimum(h - np.arange(oh) * stride, window)
    col_ext = np.minimum(w - np.arange(ow) * stride, window)
    areas = (row_ext[:, None] * col_ext[None, :]).astype(m.dtype)
    out = win.sum(axis=(-2, -1)) / areas
    return out, PoolingRouteMap(mode="avg", out_hw=(oh, ow), areas=areas)


def pool_backward(
    delta: np.ndarray,
    route: PoolingRouteMap,
    input_hw: tuple[int, int],
    window: int,
    stride: int,
    mode: str = "max",
) -> np.ndarray:
    """Route pooled sensitivities back to the pooled layer's input shape.

    Max mode adds each delta at its recorded argmax coordinate
    (overlapping windows accumulate).  Average mode spreads each delta
    uniformly over its in-bounds window, divided by the window area.
    """
    delta = np.asarray(delta)
    if mode != route.mode:
        raise ValueError(f"route was built for mode {route.mode!r}, not {mode!r}")
    oh, ow = route.out_hw
    if delta.shape[-2:] != (oh, ow):
        raise ShapeError(
            f"delta spatial shape {delta.shape[-2:]} does not match route {route.out_hw}"
        )
    h, w = input_hw
    lead = delta.shape[:-2]
    out = np.zeros(lead + (h, w), dtype=delta.dtype)

    if mode == "max":
        coords = route.coords
        if coords.shape[:-1] != delta.shape:
            raise ShapeError("route/delta shape mismatch")
        lin = coords[..., 0] * w + coords[..., 1]
        flat = out.reshape(-1, h * w)
        lin2 = lin.reshape(flat.shape[0], -1)
        d2 = delta.reshape(flat.shape[0], -1)
        np.add.at(flat, (np.arange(flat.shape[0])[:, None], lin2), d2)
        return out

    share = delta / route.areas
    for u in range(window):
        nh = int(np.count_nonzero(np.arange(oh) * stride + u < h))
        if nh == 0:
            continue
        for v in range(window):
            nw = int(np.count_nonzero(np.arange(ow) * stride + v < w))
            if nw == 0:
                continue
            out[..., u : u + nh * stride : stride, v : v + nw * stride : stride] += share[
                ..., :nh, :nw
            ]
    return out


def conv_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None,
    pad: tuple[int, int, int, int] = (0, 0, 0, 0),
    stride: int = 1,
) -> np.ndarray:
    """Batched multi-channel cross-correlation.

    x: (N, C, H, W); weight: (O, C, kh, kw); bias: (O,) or None.
    Each output map o is the sum over input channels of the valid
    correlation of channel c with weight[o, c], plus bias[o].
    """
    x = np.asarray(x)
    weight = np.asarray(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_forward expects x (N,C,H,W) and weight (O,C,kh,kw)")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match kernel channels {weight.shape[1]}"
        )
    pt, pb, pl, pr = pad
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(pad) else x
    kh, kw = weight.shape[2:]
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {xp.shape[2:]}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv_backward(
    x: np.ndarray,
    weight: np.ndarray,
    d_out: np.ndarray,
    pad: tuple[int, int, int, int] = (0, 0, 0, 0),
    stride: int = 1,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of ``conv_forward`` summed over the batch.

    Returns (d_x, d_weight, d_bias); d_x is None when not requested.
    """
    x = np.asarray(x)
    weight = np.asarray(weight)
    d_out = np.asarray(d_out)
    pt, pb, pl, pr = pad
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(pad) else x
    kh, kw = weight.shape[2:]
    n, o, oh, ow = d_out.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    d_weight = np.tensordot(d_out, win, axes=([0, 2, 3], [0, 2, 3]))
    d_bias = d_out.sum(axis=(0, 2, 3))

    d_x = None
    if need_input_grad:
        dxp = np.zeros(xp.shape, dtype=d_out.dtype)
        for u in range(kh):
            for v in range(kw):
                contrib = np.tensordot(d_out, weight[:, :, u, v], axes=([1], [0]))
                dxp[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        h, w = x.shape[2:]
        d_x = dxp[:, :, pt : pt + h, pl : pl + w]
        if any(pad):
            d_x = np.ascontiguousarray(d_x)
    return d_x, d_weight, d_bias
