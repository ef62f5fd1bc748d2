"""Input-embedding stage: dense frequency channels -> transformer tokens.

Three operations, each with an analytic backward so the whole input stage
is finite-difference checkable: a per-position linear projection of the
dense channel vector, an optional coordinate-attention gate (per-height
and per-width sigmoid gates from a shared bottleneck), and an RGB patch
embedding used as the comparison baseline. No transformer blocks live
here; downstream backbones consume the TokenGrid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image_io import RgbImage
from .selection import DenseTensor

__all__ = [
    "TokenGrid",
    "dense_embed",
    "dense_embed_backward",
    "CoordAttnParams",
    "init_coord_attention",
    "coordinate_attention",
    "coordinate_attention_backward",
    "patch_embed_rgb",
    "patch_embed_rgb_backward",
    "init_linear",
]


@dataclass
class TokenGrid:
    """(H*W) x D token matrix with its source grid dimensions."""

    tokens: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2:
            raise ValueError("tokens must be a (H*W, D) matrix")
        if self.tokens.shape[0] != self.grid_h * self.grid_w:
            raise ValueError("token count must equal H*W")
        if self.tokens.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens must be finite")

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def init_linear(fan_in: int, dim: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform +-sqrt(1/fan_in) weights, zero bias."""
    rng = np.random.default_rng(seed)
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, (fan_in, dim)), np.zeros(dim)


def _as_chw(x) -> np.ndarray:
    if isinstance(x, DenseTensor):
        x = x.data
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("expected a (C, H, W) tensor")
    return x


def dense_embed(x, weights: np.ndarray, bias: np.ndarray) -> TokenGrid:
    """token_p = W^T x_p + b at every spatial position p."""
    x = _as_chw(x)
    c, h, w = x.shape
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 2 or weights.shape[0] != c:
        raise ValueError(f"weights must be ({c}, D), got {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError("bias length must equal embedding dim")
    tokens = x.reshape(c, h * w).T @ weights + bias
    return TokenGrid(tokens=tokens, grid_h=h, grid_w=w)


def dense_embed_backward(x, weights: np.ndarray, dtokens: np.ndarray):
    """Gradients (dx, dW, db) of a scalar loss with upstream dtokens."""
    x = _as_chw(x)
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    dw = flat @ dtokens
    db = dtokens.sum(axis=0)
    dx = (np.asarray(weights) @ dtokens.T).reshape(c, h, w)
    return dx, dw, db


# ---------------------------------------------------------------------------
# Coordinate attention
# ---------------------------------------------------------------------------


@dataclass
class CoordAttnParams:
    w1: np.ndarray  # (C/r, C) shared reduction
    b1: np.ndarray
    wh: np.ndarray  # (C, C/r) height-gate expansion
    bh: np.ndarray
    ww: np.ndarray  # (C, C/r) width-gate expansion
    bw: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "wh": self.wh, "bh": self.bh,
                "ww": self.ww, "bw": self.bw}


def init_coord_attention(channels: int, reduction: int = 2, seed: int = 0) -> CoordAttnParams:
    if channels % reduction:
        raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
    rng = np.random.default_rng(seed)
    mid = channels // reduction
    b1 = math.sqrt(1.0 / channels)
    b2 = math.sqrt(1.0 / mid)
    return CoordAttnParams(
        w1=rng.uniform(-b1, b1, (mid, channels)),
        b1=np.zeros(mid),
        wh=rng.uniform(-b2, b2, (channels, mid)),
        bh=np.zeros(channels),
        ww=rng.uniform(-b2, b2, (channels, mid)),
        bw=np.zeros(channels),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def coordinate_attention(x, params: CoordAttnParams, want_cache: bool = False):
    """Gate a (C, H, W) tensor with factorized spatial attention.

    Width-pooled and height-pooled profiles go through a shared 1x1
    reduction with ReLU; two expansions produce sigmoid gates a_h (C, H)
    and a_w (C, W); output[c, i, j] = x[c, i, j] * a_h[c, i] * a_w[c, j].
    """
    x = _as_chw(x)
    c, h, w = x.shape
    mid = params.w1.shape[0]
    if params.w1.shape[1] != c or params.wh.shape != (c, mid) or params.ww.shape != (c, mid):
        raise ValueError("parameter shapes do not match input channels")
    ph = x.mean(axis=2)  # (C, H) pooled along width
    pw = x.mean(axis=1)  # (C, W) pooled along height
    cat = np.concatenate([ph, pw], axis=1)  # (C, H+W)
    z1 = params.w1 @ cat + params.b1[:, None]
    mid_act = np.maximum(z1, 0.0)
    zh = params.wh @ mid_act[:, :h] + params.bh[:, None]
    zw = params.ww @ mid_act[:, h:] + params.bw[:, None]
    ah = _sigmoid(zh)
    aw = _sigmoid(zw)
    y = x * ah[:, :, None] * aw[:, None, :]
    if not want_cache:
        return y
    cache = {"x": x, "cat": cat, "z1": z1, "mid_act": mid_act,
             "ah": ah, "aw": aw, "h": h, "w": w}
    return y, cache


def coordinate_attention_backward(cache: dict, params: CoordAttnParams, dy: np.ndarray):
    """Gradients (dx, dparams) for the coordinate-attention gate."""
    x, ah, aw = cache["x"], cache["ah"], cache["aw"]
    h, w = cache["h"], cache["w"]
    dy = np.asarray(dy)
    dx = dy * ah[:, :, None] * aw[:, None, :]
    dah = (dy * x * aw[:, None, :]).sum(axis=2)
    daw = (dy * x * ah[:, :, None]).sum(axis=1)
    dzh = dah * ah * (1.0 - ah)
    dzw = daw * aw * (1.0 - aw)
    dwh = dzh @ cache["mid_act"][:, :h].T
    dbh = dzh.sum(axis=1)
    dww = dzw @ cache["mid_act"][:, h:].T
    dbw = dzw.sum(axis=1)
    dmid = np.concatenate([params.wh.T @ dzh, params.ww.T @ dzw], axis=1)
    dmid *= cache["z1"] > 0
    dw1 = dmid @ cache["cat"].T
    db1 = dmid.sum(axis=1)
    dcat = params.w1.T @ dmid
    dx += dcat[:, :h, None] / w  # width-pool mean spreads along width
    dx += dcat[:, None, h:] / h
    dparams = CoordAttnParams(w1=dw1, b1=db1, wh=dwh, bh=dbh, ww=dww, bw=dbw)
    return dx, dparams


# ---------------------------------------------------------------------------
# RGB patch embedding baseline
# ---------------------------------------------------------------------------


def _patches(img: RgbImage, patch: int):
    a = img.as_float()
    h, w, _ = a.shape
    if h % patch or w % patch:
        raise ValueError(f"image dims {(h, w)} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = a.reshape(gh, patch, gw, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, patch * patch * 3), gh, gw


def patch_embed_rgb(img: RgbImage, patch: int, weights: np.ndarray,
                    bias: np.ndarray) -> TokenGrid:
    """Flatten non-overlapping P x P x 3 patches and project linearly."""
    flat, gh, gw = _patches(img, patch)
    weights = np.asarray(weights)
    if weights.shape[0] != flat.shape[1]:
        raise ValueError(f"weights must be ({flat.shape[1]}, D), got {weights.shape}")
    return TokenGrid(tokens=flat @ weights + np.asarray(bias), grid_h=gh, grid_w=gw)


def patch_embed_rgb_backward(img: RgbImage, patch: int, dtokens: np.ndarray):
    """Gradients (dW, db) of a scalar loss with upstream dtokens."""
    flat, _, _ = _patches(img, patch)
    return flat.T @ dtokens, dtokens.sum(axis=0)
