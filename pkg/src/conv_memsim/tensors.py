"""Dense tensor containers, the reference convolution and tensor file I/O.

All payloads are single precision. Images are ``[c][y][x]``, filter banks
``[f][c][ky][kx]`` and output maps ``[f][y][x]``, all row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, TensorFormatError

MAGIC = b"CTEN"
VERSION = 1
MAX_RANK = 8

_LCG_MUL = 6364136223846793005
_LCG_INC = 1442695040888963407


def _as_f32(data, ndim: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise ConfigError(f"{what} must be rank {ndim}, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ConfigError(f"{what} has an empty dimension: {arr.shape}")
    return arr


@dataclass(frozen=True)
class Image:
    data: np.ndarray  # (C, N_y, N_x)

    def __post_init__(self):
        data = self.data
        if isinstance(data, np.ndarray) and data.ndim == 2:
            data = data[None]
        object.__setattr__(self, "data", _as_f32(data, 3, "image"))

    @property
    def C(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FilterBank:
    data: np.ndarray  # (F, C, K, K)

    def __post_init__(self):
        arr = _as_f32(self.data, 4, "filter bank")
        if arr.shape[2] != arr.shape[3]:
            raise ConfigError(f"filters must be square, got {arr.shape[2]}x{arr.shape[3]}")
        object.__setattr__(self, "data", arr)

    @property
    def F(self) -> int:
        return self.data.shape[0]

    @property
    def C(self) -> int:
        return self.data.shape[1]

    @property
    def K(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class OutputMap:
    data: np.ndarray  # (F, O_y, O_x)

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 3, "output map"))

    @property
    def F(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def check_pair(image: Image, filters: FilterBank) -> tuple[int, int]:
    """Validate an image/filter pairing and return the valid-mode output size."""
    if image.C != filters.C:
        raise ConfigError(f"channel mismatch: image has C={image.C}, filters have C={filters.C}")
    K = filters.K
    if image.height < K or image.width < K:
        raise ConfigError(f"image {image.height}x{image.width} smaller than filter {K}x{K}")
    return image.height - K + 1, image.width - K + 1


def naive_convolve(image: Image, filters: FilterBank) -> OutputMap:
    """Valid-mode cross-correlation, accumulated in (c, ky, kx) order.

    Each output element sees exactly the float32 operation sequence
    ``acc += img * w`` over c, then ky, then kx, starting from zero.
    """
    oy, ox = check_pair(image, filters)
    img, flt = image.data, filters.data
    out = np.zeros((filters.F, oy, ox), dtype=np.float32)
    for c in range(filters.C):
        for ky in range(filters.K):
            for kx in range(filters.K):
                window = img[c, ky:ky + oy, kx:kx + ox]
                out += flt[:, c, ky, kx][:, None, None] * window[None]
    return OutputMap(out)


def lcg_states(seed: int, count: int) -> np.ndarray:
    """The first ``count`` states after ``seed`` of the 64-bit LCG, as uint64.

    Uses affine-map doubling so large tensors avoid a Python-level loop.
    """
    if count <= 0:
        return np.empty(0, dtype=np.uint64)
    mul = np.array([_LCG_MUL], dtype=np.uint64)
    inc = np.array([_LCG_INC], dtype=np.uint64)
    # mul[i], inc[i] map s0 to state i+1
    while mul.size < count:
        m_last, c_last = mul[-1], inc[-1]
        mul = np.concatenate([mul, mul * m_last])
        inc = np.concatenate([inc, mul[: inc.size] * c_last + inc])
    s0 = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return mul[:count] * s0 + inc[:count]


def gen_tensor(shape: Sequence[int], seed: int) -> np.ndarray:
    """Deterministic values in [0, 1) from a 64-bit LCG seeded with ``seed``."""
    shape = tuple(int(d) for d in shape)
    if not shape or min(shape) < 1:
        raise ConfigError(f"all dimensions must be >= 1, got {shape}")
    count = int(np.prod(shape))
    states = lcg_states(seed, count)
    vals = (states >> np.uint64(40)).astype(np.float64) / float(1 << 24)
    return vals.astype(np.float32).reshape(shape)


def gen_problem(N: int, C: int, K: int, F: int, seed: int) -> tuple[Image, FilterBank]:
    """Seeded N x N image with C channels and F filters of size K (filter seed = seed + 1)."""
    return Image(gen_tensor([C, N, N], seed)), FilterBank(gen_tensor([F, C, K, K], seed + 1))


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise TensorFormatError(f"rank {arr.ndim} not supported")
    header = MAGIC + bytes([VERSION]) + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4").tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 9 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic bytes")
    if buf[4] != VERSION:
        raise TensorFormatError(f"unsupported version {buf[4]}")
    (rank,) = struct.unpack_from("<I", buf, 5)
    if rank < 1 or rank > MAX_RANK:
        raise TensorFormatError(f"rank {rank} out of range")
    off = 9 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 9)
    count = 1
    for d in dims:
        count *= d
    if count * 4 > len(buf) - off:
        raise TensorFormatError(f"truncated payload: need {count * 4} bytes, have {len(buf) - off}")
    if count * 4 != len(buf) - off:
        raise TensorFormatError("trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(dims)


def write_tensor(path, arr) -> None:
    if isinstance(arr, (Image, FilterBank, OutputMap)):
        arr = arr.data
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
