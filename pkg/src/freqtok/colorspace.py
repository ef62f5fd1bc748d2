"""RGB <-> YCbCr (full-range BT.601 / JFIF) and 4:2:0 chroma resampling.

Planes are float64 on the [0, 255] scale with neutral chroma at 128. The
inverse transform matrix is computed from the forward one, so the float
roundtrip is exact to machine precision. Inverse transforms of truncated
spectra may step slightly outside [0, 255]; the range is a scale
convention here, clamping happens at the RGB boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .image_io import RgbImage, _resize_plane

__all__ = [
    "YcbcrImage",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "subsample_chroma",
    "upsample_chroma",
]

# BT.601 full-range: rows give Y, Cb-128, Cr-128 from [R, G, B] on 0..255
_FWD = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_INV = np.linalg.inv(_FWD)


@dataclass
class YcbcrImage:
    """Luma plus chroma planes; chroma at full or half (4:2:0) resolution."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    subsampled: bool = False

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64)
        self.cb = np.asarray(self.cb, dtype=np.float64)
        self.cr = np.asarray(self.cr, dtype=np.float64)
        if self.y.ndim != 2 or self.cb.ndim != 2 or self.cr.ndim != 2:
            raise ValueError("planes must be 2-D")
        if self.cb.shape != self.cr.shape:
            raise ValueError("cb/cr shapes differ")
        h, w = self.y.shape
        if self.subsampled:
            if h % 2 or w % 2:
                raise ValueError("subsampled image requires even luma dimensions")
            if self.cb.shape != (h // 2, w // 2):
                raise ValueError(
                    f"subsampled chroma must be {(h // 2, w // 2)}, got {self.cb.shape}"
                )
        elif self.cb.shape != (h, w):
            raise ValueError(f"full-resolution chroma must be {(h, w)}, got {self.cb.shape}")

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def width(self) -> int:
        return self.y.shape[1]


def rgb_to_ycbcr(img: RgbImage) -> YcbcrImage:
    """Full-range BT.601 transform; output planes clamped to [0, 255]."""
    rgb = img.as_float() * 255.0
    ycc = rgb @ _FWD.T
    ycc[:, :, 1] += 128.0
    ycc[:, :, 2] += 128.0
    np.clip(ycc, 0.0, 255.0, out=ycc)
    return YcbcrImage(y=ycc[:, :, 0], cb=ycc[:, :, 1], cr=ycc[:, :, 2], subsampled=False)


def ycbcr_to_rgb(img: YcbcrImage) -> RgbImage:
    """Algebraic inverse of :func:`rgb_to_ycbcr`, clamped to valid RGB."""
    if img.subsampled:
        raise StateError("upsample chroma to full resolution before converting to RGB")
    ycc = np.stack([img.y, img.cb - 128.0, img.cr - 128.0], axis=2)
    rgb = ycc @ _INV.T
    np.clip(rgb, 0.0, 255.0, out=rgb)
    return RgbImage(rgb / 255.0)


def subsample_chroma(img: YcbcrImage) -> YcbcrImage:
    """4:2:0 downsampling: 2x2 box mean on chroma, luma untouched."""
    if img.subsampled:
        raise ValueError("chroma already subsampled")
    h, w = img.y.shape
    if h % 2 or w % 2:
        raise ValueError("chroma subsampling requires even dimensions")

    def pool(p: np.ndarray) -> np.ndarray:
        return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    return YcbcrImage(y=img.y.copy(), cb=pool(img.cb), cr=pool(img.cr), subsampled=True)


def upsample_chroma(img: YcbcrImage, method: str = "nearest") -> YcbcrImage:
    """Bring 4:2:0 chroma back to luma resolution (nearest or bilinear)."""
    if not img.subsampled:
        raise ValueError("chroma is already at full resolution")
    h, w = img.y.shape
    if method == "nearest":
        up = lambda p: np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)
    elif method == "bilinear":
        up = lambda p: _resize_plane(p, w, h, "bilinear")
    else:
        raise ValueError(f"unknown upsample method {method!r}")
    return YcbcrImage(y=img.y.copy(), cb=up(img.cb), cr=up(img.cr), subsampled=False)
