"""Energy distribution across frequency channels and the density metric.

Energy is the mean squared coefficient per channel over a dataset, so the
numbers are scale-free in dataset size. Only orderings and fractions are
meaningful across datasets. Per-image partial sums are stacked and reduced
with numpy's pairwise summation, which keeps the result independent of
image order to well below 1e-12 relative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .block_dct import COMPONENTS, ChannelDesc, FrequencyTensor, zigzag_order
from .selection import ChannelSelection

__all__ = ["EnergyProfile", "channel_energy", "zigzag_profile", "density_gain", "profile_to_csv"]


@dataclass
class EnergyProfile:
    """Per-channel mean squared coefficient plus channel metadata."""

    per_channel: np.ndarray
    descriptors: tuple[ChannelDesc, ...]
    block_size: int

    def __post_init__(self) -> None:
        self.per_channel = np.asarray(self.per_channel, dtype=np.float64)
        if self.per_channel.ndim != 1 or len(self.per_channel) != len(self.descriptors):
            raise ValueError("profile length must match descriptor count")
        if np.any(self.per_channel < 0):
            raise ValueError("energies must be non-negative")

    @property
    def channels(self) -> int:
        return len(self.per_channel)

    def zigzag_positions(self) -> np.ndarray:
        """For each channel, the position of its (u, v) on the zig-zag route."""
        n = self.block_size
        inverse = np.empty(n * n, dtype=np.int64)
        inverse[zigzag_order(n)] = np.arange(n * n)
        return np.array([inverse[d.u * n + d.v] for d in self.descriptors])


def channel_energy(tensors: Iterable[FrequencyTensor]) -> EnergyProfile:
    """Mean of squared coefficients per channel across all positions and images."""
    partial_sums = []
    counts = []
    layout = None
    for t in tensors:
        key = (t.descriptors, t.block_size)
        if layout is None:
            layout = key
        elif key != layout:
            raise ValueError("tensors disagree on channel layout")
        data = np.asarray(t.data, dtype=np.float64)
        partial_sums.append(np.einsum("chw,chw->c", data, data))
        counts.append(t.grid_height * t.grid_width)
    if layout is None:
        raise ValueError("empty tensor stream")
    total = np.sum(np.stack(partial_sums), axis=0)
    return EnergyProfile(
        per_channel=total / float(np.sum(counts)),
        descriptors=layout[0],
        block_size=layout[1],
    )


def zigzag_profile(p: EnergyProfile) -> dict[str, np.ndarray]:
    """Per-component energy sequences reordered along the zig-zag route."""
    n = p.block_size
    if p.channels != 3 * n * n:
        raise ValueError(f"expected {3 * n * n} channels, got {p.channels}")
    order = zigzag_order(n)
    out = {}
    for k, comp in enumerate(COMPONENTS):
        block = p.per_channel[k * n * n : (k + 1) * n * n]
        out[comp] = block[order]
    return out


def density_gain(p: EnergyProfile, sel: ChannelSelection) -> float:
    """(retained energy / total energy) divided by (retained channels / total)."""
    if sel.total != p.channels:
        raise ValueError("selection and profile disagree on channel count")
    total = float(np.sum(p.per_channel))
    if total == 0.0:
        raise ValueError("zero total energy")
    retained = float(np.sum(p.per_channel[list(sel.kept)]))
    return (retained / total) / (len(sel.kept) / sel.total)


def profile_to_csv(p: EnergyProfile, path) -> None:
    zz = p.zigzag_positions()
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel_index", "component", "u", "v", "zigzag_pos", "energy"])
        for i, d in enumerate(p.descriptors):
            writer.writerow([i, d.component, d.u, d.v, int(zz[i]), repr(float(p.per_channel[i]))])
