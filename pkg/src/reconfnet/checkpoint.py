"""Binary checkpoint files for a model configuration and its parameters.

Layout, all little-endian::

    magic    4 bytes  b"RCNN"
    version  u16
    config   CONFIG_FIELD_COUNT x u32   (ModelConfig.as_fields order)
    tensors  float32, canonical Parameters.arrays() order, C-contiguous
    crc32    u32 over every preceding byte
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import FormatError
from .layers import DenseLayer
from .network import (CONFIG_FIELD_COUNT, CliqueParams, ModelConfig, Parameters,
                      parameter_shapes)

MAGIC = b"RCNN"
VERSION = 1
_PREFIX = struct.Struct("<4sH")
_CONFIG = struct.Struct("<" + "I" * CONFIG_FIELD_COUNT)
_CRC = struct.Struct("<I")
HEADER_SIZE = _PREFIX.size + _CONFIG.size


def assemble(config: ModelConfig, arrays) -> Parameters:
    """Build :class:`Parameters` from arrays listed in canonical order."""
    arrays = list(arrays)
    cliques = [CliqueParams(*arrays[6 * i:6 * i + 6]) for i in range(config.M)]
    rest = arrays[6 * config.M:]
    return Parameters(cliques, DenseLayer(rest[0], rest[1]), DenseLayer(rest[2], rest[3]))


def save_checkpoint(params: Parameters, config: ModelConfig, path):
    shapes = parameter_shapes(config)
    arrays = params.arrays()
    if [a.shape for a in arrays] != [tuple(s) for s in shapes]:
        raise ValueError("parameters do not match the configuration")
    body = bytearray(_PREFIX.pack(MAGIC, VERSION))
    body += _CONFIG.pack(*config.as_fields())
    for a in arrays:
        body += np.ascontiguousarray(a, dtype="<f4").tobytes()
    body += _CRC.pack(zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path):
    """Returns ``(params, config)``; raises FormatError on any corruption."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _PREFIX.size:
        raise FormatError(f"{path}: truncated header", len(buf))
    magic, version = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated config block", len(buf))
    try:
        config = ModelConfig.from_fields(_CONFIG.unpack_from(buf, _PREFIX.size))
    except ValueError as exc:
        raise FormatError(f"{path}: invalid config block: {exc}", _PREFIX.size) from exc
    shapes = parameter_shapes(config)
    n = sum(int(np.prod(s)) for s in shapes)
    expected = HEADER_SIZE + 4 * n + _CRC.size
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for this config, found {len(buf)}",
                          min(len(buf), expected))
    (stored,) = _CRC.unpack_from(buf, expected - _CRC.size)
    if zlib.crc32(buf[:expected - _CRC.size]) != stored:
        raise FormatError(f"{path}: checksum mismatch", expected - _CRC.size)
    arrays, off = [], HEADER_SIZE
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(np.frombuffer(buf, dtype="<f4", count=k, offset=off)
                      .astype(np.float32).reshape(s))
        off += 4 * k
    return assemble(config, arrays), config
