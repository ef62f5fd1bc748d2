"""Raster image I/O, resizing, and synthetic dataset generation.

Images are carried as ``RgbImage`` wrappers around (H, W, 3) arrays:
uint8 on the [0, 255] scale externally, float64 on [0, 1] once inside
the numeric pipeline. PNG files go through Pillow; binary PPM/PGM are
read and written directly so their failure modes stay under our control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "RgbImage",
    "LabeledDataset",
    "load_image",
    "save_image",
    "save_pgm",
    "resize",
    "synth_dataset",
    "natural_test_image",
    "read_manifest",
    "write_manifest",
    "psnr",
]


@dataclass
class RgbImage:
    """Planar-agnostic RGB raster: ``data`` is (H, W, 3), uint8 in [0, 255]
    or float in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        if a.dtype == np.uint8:
            pass
        elif np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64, copy=False)
            if a.size and (a.min() < -1e-9 or a.max() > 1 + 1e-9):
                raise ValueError("float image intensities must lie in [0, 1]")
        else:
            raise ValueError(f"unsupported dtype {a.dtype}")
        self.data = a

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def as_float(self) -> np.ndarray:
        """(H, W, 3) float64 in [0, 1]."""
        if self.data.dtype == np.uint8:
            return self.data.astype(np.float64) / 255.0
        return self.data

    def as_uint8(self) -> np.ndarray:
        if self.data.dtype == np.uint8:
            return self.data
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


@dataclass
class LabeledDataset:
    """Classification items: (image or path, label) pairs with labels in
    [0, class_count)."""

    items: list
    class_count: int

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("dataset must be non-empty")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        for _, label in self.items:
            if not 0 <= int(label) < self.class_count:
                raise ValueError(f"label {label} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.items)

    def image(self, i: int) -> RgbImage:
        ref, _ = self.items[i]
        if isinstance(ref, RgbImage):
            return ref
        return load_image(ref)

    def label(self, i: int) -> int:
        return int(self.items[i][1])

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(lbl) for _, lbl in self.items], dtype=np.int64)


# ---------------------------------------------------------------------------
# PPM / PGM / PNG
# ---------------------------------------------------------------------------


def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments, then read one token
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def _parse_pnm(buf: bytes) -> tuple[bytes, int, int, int, int]:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported raster format (magic {magic!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed PNM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError("PNM dimensions must be >= 1")
    if not 0 < maxval < 65536:
        raise FormatError(f"PNM maxval {maxval} out of range")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("truncated PNM header")
    return magic, width, height, maxval, pos + 1


def _decode_pnm(buf: bytes) -> np.ndarray:
    magic, width, height, maxval, pos = _parse_pnm(buf)
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    if maxval < 256:
        raw = np.frombuffer(buf, dtype=np.uint8, count=-1, offset=pos)
        if raw.size < count:
            raise FormatError("PNM pixel data shorter than header promises")
        samples = raw[:count].astype(np.uint16)
    else:
        raw = np.frombuffer(buf, dtype=">u2", count=-1, offset=pos)
        if raw.size < count:
            raise FormatError("PNM pixel data shorter than header promises")
        samples = raw[:count].astype(np.uint32)
    if maxval != 255:
        samples = (samples * 255 + maxval // 2) // maxval
    plane = samples.astype(np.uint8).reshape(height, width, channels)
    if channels == 1:
        plane = np.repeat(plane, 3, axis=2)
    return plane


def load_image(path) -> RgbImage:
    """Decode a PNG or binary PPM/PGM file; 16-bit sources are rescaled to 8-bit."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] in (b"P5", b"P6"):
        return RgbImage(_decode_pnm(buf))
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        try:
            with Image.open(path) as im:
                if im.mode in ("I", "I;16", "I;16B"):
                    arr = np.asarray(im, dtype=np.uint32)
                    arr = ((arr * 255 + 32767) // 65535).astype(np.uint8)
                    arr = np.repeat(arr[:, :, None], 3, axis=2)
                else:
                    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise FormatError(f"bad PNG file {path}: {e}") from e
        return RgbImage(arr)
    raise FormatError(f"unsupported raster format: {path}")


def save_image(img: RgbImage, path) -> None:
    """Write an image as binary PPM or PNG, by file extension."""
    path = Path(path)
    arr = img.as_uint8()
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        header = f"P6\n{img.width} {img.height}\n255\n".encode()
        path.write_bytes(header + arr.tobytes())
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported output format {suffix!r} (use .ppm or .png)")


def save_pgm(plane: np.ndarray, path) -> None:
    """Write a single uint8 plane as binary PGM."""
    a = np.asarray(plane)
    if a.ndim != 2:
        raise ValueError("PGM plane must be 2-D")
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + a.tobytes())


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------


def _resize_plane(p: np.ndarray, target_w: int, target_h: int, method: str) -> np.ndarray:
    h, w = p.shape
    if method == "nearest":
        rows = np.floor((np.arange(target_h) + 0.5) * h / target_h).astype(np.intp)
        cols = np.floor((np.arange(target_w) + 0.5) * w / target_w).astype(np.intp)
        rows = np.clip(rows, 0, h - 1)
        cols = np.clip(cols, 0, w - 1)
        return p[rows][:, cols]
    if method != "bilinear":
        raise ValueError(f"unknown resize method {method!r}")
    # align-corners-false sample positions, clamped at the edges
    ys = np.clip((np.arange(target_h) + 0.5) * h / target_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(target_w) + 0.5) * w / target_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = p[y0][:, x0] * (1.0 - wx) + p[y0][:, x1] * wx
    bot = p[y1][:, x0] * (1.0 - wx) + p[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def resize(img: RgbImage, target_w: int, target_h: int, method: str = "bilinear") -> RgbImage:
    """Resize to (target_w, target_h) with edge-clamped sampling.

    ``method`` is "nearest" or "bilinear" (align-corners-false). Identical
    target dimensions return an unchanged copy.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (target_w, target_h) == (img.width, img.height):
        return RgbImage(img.data.copy())
    src = img.as_float()
    out = np.stack(
        [_resize_plane(src[:, :, c], target_w, target_h, method) for c in range(3)],
        axis=2,
    )
    if img.data.dtype == np.uint8:
        return RgbImage(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))
    return RgbImage(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_dataset(
    seed: int,
    n: int,
    class_count: int,
    informative_channels: list[int],
    size: int = 32,
    block_size: int = 8,
    noise_sigma: float = 2.0,
    amp_high: float = 64.0,
    amp_low: float = 16.0,
) -> LabeledDataset:
    """Frequency-labeled synthetic images for desk-scale validation.

    Each image is built directly in the block-DCT domain: every component's
    DC carries the mid-gray baseline, the informative channels carry a
    class-dependent amplitude with sign-balanced positions (so each image's
    per-channel energy is exactly the squared amplitude), all other channels
    carry i.i.d. Gaussian noise. The tensor is then inverse-transformed to
    RGB. Deterministic given ``seed``.
    """
    from .block_dct import FrequencyTensor, channel_descriptors, decode
    from .colorspace import upsample_chroma, ycbcr_to_rgb

    if n < 2 * class_count:
        raise ValueError("need n >= 2 * class_count")
    if class_count < 1:
        raise ValueError("class_count must be positive")
    if not informative_channels:
        raise ValueError("need at least one informative channel")
    c_total = 3 * block_size * block_size
    for ch in informative_channels:
        if not 0 <= ch < c_total:
            raise ValueError(f"channel index {ch} out of range [0, {c_total})")
    if size % (2 * block_size) != 0:
        raise ValueError(f"size must be divisible by {2 * block_size}")

    rng = np.random.default_rng(seed)
    n_inf = len(informative_channels)
    # one amplitude profile, rotated per class; extra classes rescale it
    base = np.geomspace(amp_high, amp_low, n_inf) if n_inf > 1 else np.array([amp_high])
    hb = size // block_size
    hc = hb // 2  # chroma block grid
    dc_indices = (0, block_size**2, 2 * block_size**2)
    descriptors = channel_descriptors(block_size)

    def balanced_signs(count: int) -> np.ndarray:
        s = np.ones(count)
        s[: count // 2] = -1.0
        return rng.permutation(s)

    items = []
    for i in range(n):
        label = i % class_count
        rot = label % n_inf
        scale = 1.0 + 0.5 * (label // n_inf)
        amps = np.roll(base, rot) * scale
        data = np.zeros((c_total, hb, hb))
        for ch in range(c_total):
            comp_grid = hb if ch < block_size**2 else hc
            baseline = 128.0 * block_size if ch in dc_indices else 0.0
            if ch in informative_channels:
                j = informative_channels.index(ch)
                signs = balanced_signs(comp_grid * comp_grid).reshape(comp_grid, comp_grid)
                block = baseline + signs * amps[j]
            elif ch in dc_indices:
                block = np.full((comp_grid, comp_grid), baseline)
            else:
                block = rng.normal(0.0, noise_sigma, (comp_grid, comp_grid))
            if comp_grid == hc:
                block = np.repeat(np.repeat(block, 2, axis=0), 2, axis=1)
            data[ch] = block
        tensor = FrequencyTensor(
            data=data,
            descriptors=descriptors,
            block_size=block_size,
            source_height=size,
            source_width=size,
        )
        ycbcr = decode(tensor)
        rgb = ycbcr_to_rgb(upsample_chroma(ycbcr, method="nearest"))
        items.append((rgb, label))
    return LabeledDataset(items=items, class_count=class_count)


def natural_test_image(seed: int, size: int = 64) -> RgbImage:
    """A smooth 'natural-looking' test image: gradient base, colored blobs,
    low-pass noise. Used by energy-compaction and reconstruction studies."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.empty((size, size, 3))
    angle = rng.uniform(0, 2 * math.pi)
    ramp = (math.cos(angle) * xx + math.sin(angle) * yy + 1.0) / 2.0
    for c in range(3):
        img[:, :, c] = 0.25 + 0.5 * ramp * rng.uniform(0.6, 1.0)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        rad = rng.uniform(0.08, 0.3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad**2))
        color = rng.uniform(-0.3, 0.3, 3)
        img += blob[:, :, None] * color[None, None, :]
    noise = rng.normal(0.0, 1.0, (size, size, 3))
    for _ in range(3):  # repeated box blur = cheap low-pass
        noise = (
            noise
            + np.roll(noise, 1, axis=0)
            + np.roll(noise, -1, axis=0)
            + np.roll(noise, 1, axis=1)
            + np.roll(noise, -1, axis=1)
        ) / 5.0
    img += 0.05 * noise
    return RgbImage(np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Manifests and metrics
# ---------------------------------------------------------------------------


def write_manifest(ds: LabeledDataset, directory, fmt: str = "png") -> Path:
    """Materialize a dataset as image files plus a ``path<TAB>label`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(ds)):
        name = f"img_{i:05d}.{fmt}"
        save_image(ds.image(i), directory / name)
        lines.append(f"{name}\t{ds.label(i)}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> LabeledDataset:
    """Load a ``relative/path<TAB>label`` manifest into a lazy dataset."""
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'path<TAB>label'")
        rel, label_s = parts
        try:
            label = int(label_s)
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: bad label {label_s!r}") from e
        items.append((path.parent / rel, label))
    if not items:
        raise FormatError(f"{path}: empty manifest")
    return LabeledDataset(items=items, class_count=max(lbl for _, lbl in items) + 1)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
