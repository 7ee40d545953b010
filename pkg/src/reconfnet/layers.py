"""Forward and backward passes for the network's layer primitives.

Convolutions are cross-correlations (no kernel flip), valid extent, stride 1,
followed by tanh. Every 3D correlation is evaluated one output time-slice at a
time with identically shaped matrix products, so the value at temporal output
``s`` depends only on input frames ``s .. s+m'-1``. Downstream code relies on
this: the features of a short window are bit-identical to the matching slice
of a pass over the whole video.

Grouped variants take a leading group axis ``G``; group ``g`` of the input is
only ever combined with group ``g`` of the kernels. A plain 3D convolution is
the ``G = 1`` case and a 2D convolution is the ``m' = 1`` case, so there is a
single code path for all three.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, StateError
from .tensor import conv_output_shape


@dataclass
class Conv3DKernel:
    """One kernel: ``weights`` of shape (channels, m', h', w') and a scalar bias."""
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise DimensionError(f"kernel weights must be 4-D, got {self.weights.shape}")
        if self.weights.shape[0] not in (1, 2):
            raise DimensionError(f"kernel channels must be 1 or 2, got {self.weights.shape[0]}")


@dataclass
class PoolRecord:
    pooled: np.ndarray
    argmax: np.ndarray  # flat index into the pooled input, one per output cell
    input_shape: tuple


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    biases: np.ndarray   # (fan_out,)

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]


# ---------------------------------------------------------------------------
# 3D / 2D convolution

def _check_grouped(x, w):
    if x.ndim != 5:
        raise DimensionError(f"grouped input must be (G, C, T, H, W), got {x.shape}")
    if w.ndim != 6:
        raise DimensionError(f"grouped kernels must be (G, n, C, m', h', w'), got {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise DimensionError(f"group count mismatch: input {x.shape[0]}, kernels {w.shape[0]}")
    if x.shape[1] != w.shape[2]:
        raise DimensionError(f"channel mismatch: input {x.shape[1]}, kernels {w.shape[2]}")
    return conv_output_shape(x.shape[2:], w.shape[3:])


def correlate3d_grouped(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pre-activation sums of a grouped valid 3D correlation.

    ``x`` is (G, C, T, H, W), ``w`` is (G, n, C, m', h', w'); the result is
    (G, n, T-m'+1, H-h'+1, W-w'+1). Channels are summed before any activation.
    """
    To, Ho, Wo = _check_grouped(x, w)
    G, n, C, mt, kh, kw = w.shape
    k = C * mt * kh * kw
    wmat = np.ascontiguousarray(w.reshape(G, n, k).transpose(0, 2, 1))
    out = np.empty((G, n, To, Ho, Wo), dtype=np.result_type(x, w))
    for s in range(To):
        win = sliding_window_view(x[:, :, s:s + mt], (kh, kw), axis=(3, 4))
        cols = win.transpose(0, 3, 4, 1, 2, 5, 6).reshape(G, Ho * Wo, k)
        out[:, :, s] = np.matmul(cols, wmat).transpose(0, 2, 1).reshape(G, n, Ho, Wo)
    return out


def conv3d_forward_grouped(x, w, b, return_preactivation=False):
    """tanh(b + correlation) for every group; ``b`` has shape (G, n)."""
    pre = correlate3d_grouped(x, w)
    if b.shape != w.shape[:2]:
        raise DimensionError(f"bias shape {b.shape} does not match kernels {w.shape[:2]}")
    pre += b[:, :, None, None, None]
    v = np.tanh(pre)
    if return_preactivation:
        return v, pre
    return v


def conv3d_backward_grouped(grad_out, x, pre, w, need_input_grad=True):
    """Gradients of :func:`conv3d_forward_grouped`.

    Returns ``(grad_x, grad_w, grad_b)``; ``grad_x`` is None when
    ``need_input_grad`` is false.
    """
    if x is None or pre is None:
        raise StateError("conv3d backward called without cached input/preactivation")
    out_shape = _check_grouped(x, w)
    if pre.shape != w.shape[:2] + out_shape or grad_out.shape != pre.shape:
        raise StateError(
            f"cached preactivation {pre.shape} / grad {grad_out.shape} do not match "
            f"forward output {w.shape[:2] + out_shape}")
    G, n, C, mt, kh, kw = w.shape
    v = np.tanh(pre)
    gp = grad_out * (1.0 - v * v)
    grad_b = gp.sum(axis=(2, 3, 4))

    p = int(np.prod(out_shape))
    win = sliding_window_view(x, (mt, kh, kw), axis=(2, 3, 4))
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(G, p, C * mt * kh * kw)
    grad_w = np.matmul(gp.reshape(G, n, p), cols).reshape(w.shape)

    grad_x = None
    if need_input_grad:
        T, H, W = x.shape[2:]
        padded = np.pad(gp, ((0, 0), (0, 0), (mt - 1, mt - 1), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        win = sliding_window_view(padded, (mt, kh, kw), axis=(2, 3, 4))
        cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(G, T * H * W, n * mt * kh * kw)
        flipped = w[:, :, :, ::-1, ::-1, ::-1].transpose(0, 1, 3, 4, 5, 2)
        flipped = flipped.reshape(G, n * mt * kh * kw, C)
        grad_x = np.matmul(cols, flipped).transpose(0, 2, 1).reshape(x.shape)
    return grad_x, grad_w, grad_b


def _lift_kernel(weights, bias):
    weights = np.asarray(weights)
    single = weights.ndim == 4
    if single:
        weights = weights[None]
        bias = np.asarray([bias], dtype=weights.dtype)
    if weights.ndim != 5:
        raise DimensionError(f"kernel bank must be (n, C, m', h', w'), got {weights.shape}")
    bias = np.asarray(bias, dtype=weights.dtype).reshape(weights.shape[0])
    return weights[None], bias[None], single


def conv3d_forward(x, weights, bias=None, return_preactivation=False):
    """Valid 3D convolution with tanh of a (C, T, H, W) input.

    ``weights`` is one kernel (C, m', h', w') with a scalar ``bias`` giving a
    (T', H', W') output, or a bank (n, C, m', h', w') with ``bias`` of shape
    (n,) giving (n, T', H', W').
    """
    if isinstance(weights, Conv3DKernel):
        weights, bias = weights.weights, weights.bias
    if bias is None:
        raise ValueError("bias is required unless a Conv3DKernel is given")
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"input must be (C, T, H, W), got {x.shape}")
    w, b, single = _lift_kernel(weights, bias)
    v, pre = conv3d_forward_grouped(x[None], w, b, return_preactivation=True)
    v, pre = v[0], pre[0]
    if single:
        v, pre = v[0], pre[0]
    if return_preactivation:
        return v, pre
    return v


def conv3d_backward(grad_out, cached_input, cached_preactivation, weights, need_input_grad=True):
    """Gradients of :func:`conv3d_forward` for the same kernel layout.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    if cached_input is None or cached_preactivation is None:
        raise StateError("conv3d backward called without cached input/preactivation")
    if isinstance(weights, Conv3DKernel):
        weights = weights.weights
    weights = np.asarray(weights)
    single = weights.ndim == 4
    w = weights[None, None] if single else weights[None]
    pre = np.asarray(cached_preactivation)
    g = np.asarray(grad_out)
    if single:
        pre, g = pre[None], g[None]
    gx, gw, gb = conv3d_backward_grouped(
        g[None], np.asarray(cached_input)[None], pre[None], w, need_input_grad)
    gx = None if gx is None else gx[0]
    if single:
        return gx, gw[0, 0], float(gb[0, 0])
    return gx, gw[0], gb[0]


def conv2d_forward(maps, weights, bias, return_preactivation=False):
    """2D convolution with tanh, run as a 3D convolution with m' = 1.

    ``maps`` is one (H, W) map or a (T, H, W) set convolved map by map;
    ``weights`` is (h', w') or a bank (n, h', w').
    """
    maps = np.asarray(maps)
    weights = np.asarray(weights)
    flat = maps.ndim == 2
    x = maps[None, None] if flat else maps[None]
    if weights.ndim == 2:
        w = weights[None, None]
    elif weights.ndim == 3:
        w = weights[:, None, None]
    else:
        raise DimensionError(f"2D kernel must be (h', w') or (n, h', w'), got {weights.shape}")
    v, pre = conv3d_forward(x, w, bias, return_preactivation=True)
    if flat:
        v, pre = v[..., 0, :, :], pre[..., 0, :, :]
    if return_preactivation:
        return v, pre
    return v


# ---------------------------------------------------------------------------
# max-pooling

def maxpool_forward(x, window) -> PoolRecord:
    """Non-overlapping spatial max over the last two axes.

    Extents that do not divide evenly leave a truncated trailing window, which
    is pooled over the cells it has. Ties go to the first cell in row-major
    window order.
    """
    x = np.asarray(x)
    if x.ndim < 2:
        raise DimensionError(f"pooling input needs at least 2 axes, got {x.shape}")
    ph, pw = window
    H, W = x.shape[-2:]
    if ph < 1 or pw < 1 or ph > H or pw > W:
        raise DimensionError(f"pool window {(ph, pw)} does not fit input {(H, W)}")
    Ho, Wo = -(-H // ph), -(-W // pw)
    maps = x.reshape(-1, H, W)
    n = maps.shape[0]
    if Ho * ph != H or Wo * pw != W:
        padded = np.full((n, Ho * ph, Wo * pw), -np.inf, dtype=x.dtype)
        padded[:, :H, :W] = maps
    else:
        padded = maps
    blocks = padded.reshape(n, Ho, ph, Wo, pw).transpose(0, 1, 3, 2, 4).reshape(n, Ho, Wo, ph * pw)
    k = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, k[..., None], axis=-1)[..., 0]
    rows = np.arange(Ho)[:, None] * ph + k // pw
    cols = np.arange(Wo)[None, :] * pw + k % pw
    argmax = np.arange(n)[:, None, None] * (H * W) + rows * W + cols
    lead = x.shape[:-2]
    return PoolRecord(pooled.reshape(lead + (Ho, Wo)), argmax.reshape(lead + (Ho, Wo)), x.shape)


def maxpool_backward(grad_out, record: PoolRecord, input_shape=None) -> np.ndarray:
    """Route each output gradient to the input cell that won its window."""
    shape = tuple(input_shape) if input_shape is not None else record.input_shape
    size = int(np.prod(shape))
    idx = np.asarray(record.argmax).ravel()
    g = np.asarray(grad_out)
    if g.shape != record.pooled.shape:
        raise StateError(f"grad shape {g.shape} does not match pooled shape {record.pooled.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise StateError(f"argmax index out of bounds for input shape {shape}")
    grad = np.zeros(size, dtype=g.dtype)
    np.add.at(grad, idx, g.ravel())
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# full connection and softmax

def _activate(pre, activation):
    if activation == "tanh":
        return np.tanh(pre)
    if activation == "identity":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


def dense_forward(x, layer: DenseLayer, activation="tanh", return_preactivation=False):
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != layer.fan_in:
        raise DimensionError(f"dense input length {x.shape} does not match fan_in {layer.fan_in}")
    pre = x @ layer.weights + layer.biases
    out = _activate(pre, activation)
    if return_preactivation:
        return out, pre
    return out


def dense_backward(grad_out, cached_input, cached_preactivation, layer: DenseLayer,
                   activation="tanh"):
    """Returns ``(grad_input, grad_weights, grad_biases)``."""
    if cached_input is None or cached_preactivation is None:
        raise StateError("dense backward called without cached input/preactivation")
    if cached_input.shape != (layer.fan_in,) or cached_preactivation.shape != (layer.fan_out,):
        raise StateError("dense cache does not match layer shape")
    g = np.asarray(grad_out)
    if activation == "tanh":
        v = np.tanh(cached_preactivation)
        g = g * (1.0 - v * v)
    elif activation != "identity":
        raise ValueError(f"unknown activation {activation!r}")
    return layer.weights @ g, np.outer(cached_input, g), g


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis with max subtraction.

    The normaliser is accumulated class by class so a row gives the same bits
    whether it is evaluated alone or inside a batch.
    """
    z = np.asarray(logits)
    if z.shape[-1] < 1:
        raise DimensionError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    denom = e[..., 0].copy()
    for k in range(1, z.shape[-1]):
        denom += e[..., k]
    return e / denom[..., None]
