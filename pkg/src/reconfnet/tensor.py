"""Array helpers: shape arithmetic, activation and flattening.

Tensors are plain numpy arrays in row-major order with axis order
(channel, temporal, height, width). There is no broadcasting anywhere in the
package; mismatched shapes raise :class:`DimensionError`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError

COMPUTE_DTYPE = np.float32
CHECK_DTYPE = np.float64

_AXIS_NAMES = ("channel", "temporal", "height", "width")


def as_tensor(data, dtype=COMPUTE_DTYPE) -> np.ndarray:
    """Copy ``data`` into a C-contiguous array, rejecting empty extents."""
    arr = np.array(data, dtype=dtype, order="C")
    if any(n < 1 for n in arr.shape):
        raise DimensionError(f"all extents must be >= 1, got {arr.shape}")
    return arr


def conv_output_shape(input_shape: Sequence[int], kernel_shape: Sequence[int]) -> tuple:
    """Extents of a valid, stride-1 correlation: ``input - kernel + 1`` per axis."""
    if len(input_shape) != len(kernel_shape):
        raise DimensionError(
            f"rank mismatch: input {tuple(input_shape)} vs kernel {tuple(kernel_shape)}")
    out = []
    for axis, (n, k) in enumerate(zip(input_shape, kernel_shape)):
        if k < 1:
            raise DimensionError(f"kernel extent on axis {axis} must be >= 1, got {k}")
        if k > n:
            raise DimensionError(
                f"kernel extent {k} exceeds input extent {n} on axis {axis}")
        out.append(n - k + 1)
    return tuple(out)


def tanh_map(t: np.ndarray) -> np.ndarray:
    return np.tanh(t)


def concat_flatten(tensors: Sequence[np.ndarray]) -> np.ndarray:
    """Row-major flatten every tensor and join them in list order."""
    if len(tensors) == 0:
        raise ValueError("concat_flatten needs at least one tensor")
    return np.concatenate([np.ravel(np.asarray(t), order="C") for t in tensors])


def flat_index_source(shapes: Sequence[Sequence[int]], flat_index: int) -> tuple[int, tuple]:
    """Inverse of :func:`concat_flatten` for one position.

    Returns ``(tensor_number, multi_index)`` of the element that ended up at
    ``flat_index``.
    """
    if flat_index < 0:
        raise IndexError(flat_index)
    offset = 0
    for k, shape in enumerate(shapes):
        size = int(np.prod(shape, dtype=np.int64))
        if flat_index < offset + size:
            return k, tuple(int(i) for i in np.unravel_index(flat_index - offset, tuple(shape)))
        offset += size
    raise IndexError(f"flat index {flat_index} past total length {offset}")
