"""N x N block DCT codec with frequency-major channel layout.

The transform is the orthonormal type-II DCT (type-III inverse), computed
with a cached basis matrix, so Parseval holds exactly and the energy
bookkeeping downstream is honest. ``encode`` regroups coefficients so that
channel (component, u, v) is a spatial map over block positions; chroma
maps are upsampled 2x onto the luma block grid (nearest by default, which
keeps the roundtrip exact).

Channel index convention: component_offset + u * N + v, with offsets
Y = 0, Cb = N^2, Cr = 2 * N^2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .colorspace import YcbcrImage, rgb_to_ycbcr, subsample_chroma, upsample_chroma, ycbcr_to_rgb
from .errors import FormatError, StateError
from .image_io import RgbImage, _resize_plane

__all__ = [
    "ChannelDesc",
    "FrequencyTensor",
    "channel_descriptors",
    "channel_index",
    "dct_matrix",
    "dct2d_block",
    "idct2d_block",
    "encode",
    "decode",
    "encode_rgb",
    "decode_rgb",
    "zigzag_order",
    "save_tensor",
    "load_tensor",
    "save_array",
    "load_array",
]

COMPONENTS = ("Y", "Cb", "Cr")


class ChannelDesc(NamedTuple):
    component: str  # "Y" | "Cb" | "Cr"
    u: int  # vertical frequency
    v: int  # horizontal frequency


def channel_index(component: str, u: int, v: int, block_size: int) -> int:
    return COMPONENTS.index(component) * block_size * block_size + u * block_size + v


def channel_descriptors(block_size: int) -> tuple[ChannelDesc, ...]:
    """All 3*N^2 descriptors in channel-index order."""
    return tuple(
        ChannelDesc(comp, u, v)
        for comp in COMPONENTS
        for u in range(block_size)
        for v in range(block_size)
    )


@dataclass
class FrequencyTensor:
    """C x H x W block-DCT coefficients at block-grid resolution, each
    channel tagged with its (component, u, v) descriptor."""

    data: np.ndarray
    descriptors: tuple[ChannelDesc, ...]
    block_size: int
    source_height: int
    source_width: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("tensor data must be (C, H, W)")
        self.descriptors = tuple(self.descriptors)
        if len(self.descriptors) != self.data.shape[0]:
            raise ValueError("descriptor count must match channel count")
        if len(set(self.descriptors)) != len(self.descriptors):
            raise ValueError("duplicate channel descriptors")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid_height(self) -> int:
        return self.data.shape[1]

    @property
    def grid_width(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# Block transform
# ---------------------------------------------------------------------------

_DCT_MATRICES: dict[int, np.ndarray] = {}


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows M[k] = s_k * cos(pi*(2j+1)*k / (2n))."""
    m = _DCT_MATRICES.get(n)
    if m is None:
        j = np.arange(n)
        k = j[:, None]
        m = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
        m[0] *= np.sqrt(1.0 / n)
        m[1:] *= np.sqrt(2.0 / n)
        m.setflags(write=False)
        _DCT_MATRICES[n] = m
    return m


def dct2d_block(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one square block."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"block must be square, got {block.shape}")
    if block.shape[0] < 2:
        raise ValueError("block size must be >= 2")
    m = dct_matrix(block.shape[0])
    return m @ block @ m.T


def idct2d_block(coeffs: np.ndarray) -> np.ndarray:
    """Inverse (DCT-III with matching normalization) of :func:`dct2d_block`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError(f"coefficient block must be square, got {coeffs.shape}")
    m = dct_matrix(coeffs.shape[0])
    return m.T @ coeffs @ m


def _plane_to_channels(plane: np.ndarray, n: int) -> np.ndarray:
    """(H, W) plane -> (N^2, H/N, W/N) frequency-major channel maps."""
    h, w = plane.shape
    hb, wb = h // n, w // n
    blocks = plane.reshape(hb, n, wb, n).transpose(0, 2, 1, 3)
    m = dct_matrix(n)
    coeffs = np.einsum("ui,hwij,vj->hwuv", m, blocks, m, optimize=True)
    return coeffs.transpose(2, 3, 0, 1).reshape(n * n, hb, wb)


def _channels_to_plane(chans: np.ndarray, n: int) -> np.ndarray:
    """(N^2, H/N, W/N) channel maps -> (H, W) plane via inverse transform."""
    hb, wb = chans.shape[1], chans.shape[2]
    coeffs = chans.reshape(n, n, hb, wb).transpose(2, 3, 0, 1)
    m = dct_matrix(n)
    blocks = np.einsum("iu,hwuv,jv->hwij", m.T, coeffs, m.T, optimize=True)
    return blocks.transpose(0, 2, 1, 3).reshape(hb * n, wb * n)


def encode(img: YcbcrImage, block_size: int = 8, chroma_upsample: str = "nearest") -> FrequencyTensor:
    """Block-DCT a 4:2:0 YCbCr image into a 3*N^2-channel frequency tensor.

    Chroma channel maps (at half block-grid resolution) are upsampled 2x onto
    the luma block grid; "nearest" replication is exactly invertible.
    """
    if not img.subsampled:
        raise ValueError("encode expects 4:2:0 subsampled input")
    n = block_size
    if n < 2:
        raise ValueError("block size must be >= 2")
    h, w = img.y.shape
    hc, wc = img.cb.shape
    if h % n or w % n or hc % n or wc % n:
        raise ValueError(f"plane dimensions {(h, w)} / {(hc, wc)} must be divisible by {n}")

    luma = _plane_to_channels(img.y, n)
    hb, wb = luma.shape[1], luma.shape[2]
    maps = [luma]
    for plane in (img.cb, img.cr):
        sub = _plane_to_channels(plane, n)
        if chroma_upsample == "nearest":
            up = np.repeat(np.repeat(sub, 2, axis=1), 2, axis=2)
        elif chroma_upsample == "bilinear":
            up = np.stack([_resize_plane(c, wb, hb, "bilinear") for c in sub])
        else:
            raise ValueError(f"unknown chroma upsample method {chroma_upsample!r}")
        maps.append(up)
    return FrequencyTensor(
        data=np.concatenate(maps, axis=0),
        descriptors=channel_descriptors(n),
        block_size=n,
        source_height=h,
        source_width=w,
    )


def decode(t: FrequencyTensor) -> YcbcrImage:
    """Invert :func:`encode`: chroma maps are 2x2 mean-pooled back to their
    own block grid (exact inverse of nearest upsampling), then all planes are
    inverse-transformed. Requires the complete channel set."""
    n = t.block_size
    if t.channels != 3 * n * n or t.descriptors != channel_descriptors(n):
        raise StateError("decode requires the complete channel set; zero-fill selections first")
    hb, wb = t.grid_height, t.grid_width
    if hb % 2 or wb % 2:
        raise ValueError("block grid must have even dimensions for 4:2:0 decoding")
    nn = n * n
    y = _channels_to_plane(np.asarray(t.data[:nn], dtype=np.float64), n)
    planes = []
    for k in (1, 2):
        chans = np.asarray(t.data[k * nn : (k + 1) * nn], dtype=np.float64)
        pooled = chans.reshape(nn, hb // 2, 2, wb // 2, 2).mean(axis=(2, 4))
        planes.append(_channels_to_plane(pooled, n))
    return YcbcrImage(y=y, cb=planes[0], cr=planes[1], subsampled=True)


def encode_rgb(
    img: RgbImage, block_size: int = 8, chroma_upsample: str = "nearest"
) -> FrequencyTensor:
    """Full preprocessing chain: RGB -> YCbCr -> 4:2:0 -> block DCT."""
    return encode(subsample_chroma(rgb_to_ycbcr(img)), block_size, chroma_upsample)


def decode_rgb(t: FrequencyTensor, chroma_upsample: str = "nearest") -> RgbImage:
    """Inverse chain back to (clamped) RGB."""
    return ycbcr_to_rgb(upsample_chroma(decode(t), method=chroma_upsample))


def zigzag_order(n: int) -> list[int]:
    """Anti-diagonal traversal of the N x N frequency grid from DC,
    alternating direction per diagonal; returns row-major linear indices."""
    if n < 1:
        raise ValueError("block size must be >= 1")
    order = []
    for d in range(2 * n - 1):
        lo = max(0, d - n + 1)
        hi = min(d, n - 1)
        rows = range(lo, hi + 1) if d % 2 else range(hi, lo - 1, -1)
        order.extend(r * n + (d - r) for r in rows)
    return order


# ---------------------------------------------------------------------------
# Container file (magic "DFT1")
# ---------------------------------------------------------------------------

_MAGIC = b"DFT1"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIBH")  # magic, version, C, H, W, dtype, N
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_COMP_CODES = {"Y": 0, "Cb": 1, "Cr": 2}
_COMP_NAMES = {v: k for k, v in _COMP_CODES.items()}


def _write_container(path, data, block_size, descriptors) -> None:
    data = np.asarray(data)
    if data.dtype == np.float64:
        code = 0
    elif data.dtype == np.float32:
        code = 1
    else:
        raise ValueError(f"container holds float32/float64 data, not {data.dtype}")
    c, h, w = data.shape
    parts = [_HEADER.pack(_MAGIC, _VERSION, c, h, w, code, block_size)]
    if descriptors is not None:
        if len(descriptors) != c:
            raise ValueError("descriptor count must match channel count")
        parts.append(bytes(b for d in descriptors for b in (_COMP_CODES[d.component], d.u, d.v)))
    parts.append(np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read_container(path):
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size or buf[:4] != _MAGIC:
        raise FormatError(f"not a DFT1 container: {path}")
    magic, version, c, h, w, code, n = _HEADER.unpack_from(buf)
    if version != _VERSION:
        raise FormatError(f"unsupported container version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = _DTYPES[code]
    data_bytes = c * h * w * dtype.itemsize
    body = len(buf) - _HEADER.size
    if body == 3 * c + data_bytes:  # descriptor records present
        recs = buf[_HEADER.size : _HEADER.size + 3 * c]
        try:
            descriptors = tuple(
                ChannelDesc(_COMP_NAMES[recs[3 * i]], recs[3 * i + 1], recs[3 * i + 2])
                for i in range(c)
            )
        except KeyError as e:
            raise FormatError(f"bad component code in {path}") from e
        offset = _HEADER.size + 3 * c
    elif body == data_bytes:
        descriptors = None
        offset = _HEADER.size
    else:
        raise FormatError(f"container size mismatch in {path}")
    data = np.frombuffer(buf, dtype=dtype, count=c * h * w, offset=offset)
    return data.reshape(c, h, w).copy(), n, descriptors


def save_tensor(t: FrequencyTensor, path) -> None:
    _write_container(path, t.data, t.block_size, t.descriptors)


def load_tensor(path) -> FrequencyTensor:
    data, n, descriptors = _read_container(path)
    if descriptors is None:
        raise FormatError(f"container {path} has no channel descriptors")
    return FrequencyTensor(
        data=data,
        descriptors=descriptors,
        block_size=n,
        source_height=data.shape[1] * n,
        source_width=data.shape[2] * n,
    )


def save_array(arr: np.ndarray, path) -> None:
    """Descriptor-less container, e.g. for token grids."""
    _write_container(path, arr, 0, None)


def load_array(path) -> np.ndarray:
    data, _, _ = _read_container(path)
    return data
