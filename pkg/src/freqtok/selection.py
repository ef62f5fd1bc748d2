"""Channel selection: turn per-channel scores into masks and apply them.

A selection always carries the strategy and scores that produced it, so a
downstream experiment can be reproduced from the JSON file alone.
Thresholding keeps channels with score strictly greater than t (so t = 0
keeps exactly the strictly positive channels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .block_dct import COMPONENTS, ChannelDesc, FrequencyTensor, channel_descriptors
from .errors import FormatError

__all__ = [
    "ChannelSelection",
    "DenseTensor",
    "select_by_threshold",
    "select_square",
    "select_explicit",
    "apply_selection",
    "zero_fill",
    "save_selection",
    "load_selection",
    "coefficient_energy",
]


@dataclass
class ChannelSelection:
    """Ordered mask over C frequency channels plus its provenance."""

    kept: tuple[int, ...]
    total: int
    block_size: int
    strategy: dict
    scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.kept = tuple(int(i) for i in self.kept)
        if len(set(self.kept)) != len(self.kept):
            raise ValueError("kept indices must be unique")
        if any(not 0 <= i < self.total for i in self.kept):
            raise ValueError(f"kept indices must lie in [0, {self.total})")
        if tuple(sorted(self.kept)) != self.kept:
            raise ValueError("kept indices must be sorted ascending")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != (self.total,):
                raise ValueError("scores length must equal total channel count")

    def __len__(self) -> int:
        return len(self.kept)

    @property
    def dropped(self) -> tuple[int, ...]:
        keep = set(self.kept)
        return tuple(i for i in range(self.total) if i not in keep)


@dataclass
class DenseTensor:
    """FrequencyTensor restricted to the kept channels, with a back-reference
    to the selection that produced it."""

    data: np.ndarray
    descriptors: tuple[ChannelDesc, ...]
    selection: ChannelSelection
    block_size: int
    source_height: int
    source_width: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("tensor data must be (C, H, W)")
        if self.data.shape[0] != len(self.selection.kept):
            raise ValueError("channel count must equal the number of kept channels")
        if len(self.descriptors) != self.data.shape[0]:
            raise ValueError("descriptor count must match channel count")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid_height(self) -> int:
        return self.data.shape[1]

    @property
    def grid_width(self) -> int:
        return self.data.shape[2]


def select_by_threshold(scores: np.ndarray, t: float, block_size: int = 8) -> ChannelSelection:
    """Keep exactly the channels whose score is strictly greater than t."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("scores must be a flat vector")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    kept = tuple(int(i) for i in np.nonzero(scores > t)[0])
    return ChannelSelection(
        kept=kept,
        total=len(scores),
        block_size=block_size,
        strategy={"kind": "threshold", "threshold": float(t)},
        scores=scores,
    )


def select_square(block_size: int, sq_y: int, sq_cb: int, sq_cr: int) -> ChannelSelection:
    """Shape-based baseline: per component, keep the top-left square of the
    frequency grid (u < side and v < side)."""
    n = block_size
    sides = (sq_y, sq_cb, sq_cr)
    for s in sides:
        if not 0 <= s <= n:
            raise ValueError(f"square side {s} outside [0, {n}]")
    kept = []
    for k, side in enumerate(sides):
        base = k * n * n
        kept.extend(base + u * n + v for u in range(side) for v in range(side))
    return ChannelSelection(
        kept=tuple(sorted(kept)),
        total=3 * n * n,
        block_size=n,
        strategy={"kind": "square", "sides": list(sides)},
    )


def select_explicit(kept, total: int, block_size: int = 8) -> ChannelSelection:
    return ChannelSelection(
        kept=tuple(sorted(int(i) for i in kept)),
        total=total,
        block_size=block_size,
        strategy={"kind": "explicit"},
    )


def apply_selection(t: FrequencyTensor, sel: ChannelSelection) -> DenseTensor:
    """Copy the kept channels, ascending index order, descriptors preserved."""
    if sel.total != t.channels:
        raise ValueError(f"selection is over {sel.total} channels, tensor has {t.channels}")
    if not sel.kept:
        raise ValueError("empty selection")
    idx = list(sel.kept)
    return DenseTensor(
        data=t.data[idx].copy(),
        descriptors=tuple(t.descriptors[i] for i in idx),
        selection=sel,
        block_size=t.block_size,
        source_height=t.source_height,
        source_width=t.source_width,
    )


def zero_fill(d: DenseTensor) -> FrequencyTensor:
    """Expand back to the full channel set with dropped channels at zero."""
    sel = d.selection
    full = np.zeros((sel.total,) + d.data.shape[1:], dtype=d.data.dtype)
    full[list(sel.kept)] = d.data
    return FrequencyTensor(
        data=full,
        descriptors=channel_descriptors(d.block_size),
        block_size=d.block_size,
        source_height=d.source_height,
        source_width=d.source_width,
    )


def coefficient_energy(t: FrequencyTensor, channels) -> float:
    """Sum of squared true coefficients over the given channels.

    Chroma channel maps are stored upsampled 2x by replication (nearest
    mode), so each true chroma coefficient appears four times; its stored
    sum of squares is divided by 4 accordingly.
    """
    idx = np.asarray(sorted(channels), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    if idx.min() < 0 or idx.max() >= t.channels:
        raise ValueError("channel index out of range")
    nn = t.block_size * t.block_size
    data = np.asarray(t.data, dtype=np.float64)
    luma = idx[idx < nn]
    chroma = idx[idx >= nn]
    e = float(np.sum(data[luma] ** 2))
    e += float(np.sum(data[chroma] ** 2)) / 4.0
    return e


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------


def save_selection(sel: ChannelSelection, path) -> None:
    doc = {
        "block_size": sel.block_size,
        "total": sel.total,
        "strategy": sel.strategy,
        "kept": list(sel.kept),
        "scores": None if sel.scores is None else [float(s) for s in sel.scores],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_selection(path) -> ChannelSelection:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed selection file {path}: {e}") from e
    try:
        kept = doc["kept"]
        total = int(doc["total"])
        block_size = int(doc["block_size"])
        strategy = doc["strategy"]
        scores = doc.get("scores")
    except (KeyError, TypeError) as e:
        raise FormatError(f"selection file {path} missing field: {e}") from e
    try:
        return ChannelSelection(
            kept=tuple(sorted(int(i) for i in kept)),
            total=total,
            block_size=block_size,
            strategy=strategy,
            scores=None if scores is None else np.asarray(scores, dtype=np.float64),
        )
    except ValueError as e:
        raise FormatError(f"invalid selection in {path}: {e}") from e
