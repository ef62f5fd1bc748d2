"""Small differentiable conv net used to score frequency channels.

Forward and backward passes are written out by hand in numpy so the
gradients are analytic and checkable against finite differences. The
architecture is deliberately modest: a stack of 3x3 conv + ReLU stages
(activation taps named block1..blockN), global average pooling, and a
linear or cosine classification head. Channel importance comes from
GradCAM at a tap, computed once per candidate channel with every other
input channel zeroed.

Inputs are standardized per channel with statistics frozen at training
time; masking a channel therefore means feeding the zero *raw* value,
the same background a fully absent channel would produce.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .arrayfile import load_arrays, save_arrays
from .block_dct import FrequencyTensor, encode_rgb
from .errors import StateError, TrainingError
from .image_io import LabeledDataset, _resize_plane

__all__ = [
    "ProbeConfig",
    "ProbeModel",
    "TrainConfig",
    "TrainResult",
    "HeatmapSet",
    "cosine_logits",
    "softmax_cross_entropy",
    "train_probe",
    "encode_dataset",
    "gradcam",
    "channelwise_heatmap",
    "aggregate_scores",
    "save_checkpoint",
    "load_checkpoint",
]

_STD_FLOOR = 1e-6
_NORM_EPS = 1e-8


@dataclass(frozen=True)
class ProbeConfig:
    in_channels: int
    class_count: int
    widths: tuple[int, ...] = (32, 64, 128)
    strides: tuple[int, ...] = (1, 2, 2)
    head: str = "cosine"  # "cosine" | "linear"
    cosine_scale: float = 16.0
    block_size: int = 8
    seed: int = 0
    dtype: str = "float32"  # "float64" for gradient verification

    def __post_init__(self) -> None:
        if len(self.widths) != len(self.strides) or not self.widths:
            raise ValueError("widths and strides must be non-empty and equal length")
        if self.head not in ("cosine", "linear"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(f"block{i + 1}" for i in range(len(self.widths)))

    def hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _conv_forward(x, w, b, stride):
    """3x3 convolution, padding 1. Returns output and the patch tensor
    (B, C, 3, 3, Ho, Wo) kept for the backward pass."""
    bsz, c, h, wd = x.shape
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((bsz, c, 3, 3, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                                  j : j + stride * (wo - 1) + 1 : stride]
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # (B, Ho, Wo, F)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]
    return out, cols


def _conv_backward(dout, cols, w, in_shape, stride):
    bsz, c, h, wd = in_shape
    ho, wo = dout.shape[2], dout.shape[3]
    d = dout.transpose(0, 2, 3, 1)  # (B, Ho, Wo, F)
    dw = np.tensordot(d, cols, axes=([0, 1, 2], [0, 4, 5]))  # (F, C, 3, 3)
    db = d.sum(axis=(0, 1, 2))
    dcols = np.tensordot(d, w, axes=([3], [0]))  # (B, Ho, Wo, C, 3, 3)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (B, C, 3, 3, Ho, Wo)
    dxp = np.zeros((bsz, c, h + 2, wd + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def cosine_logits(features: np.ndarray, prototypes: np.ndarray, scale: float) -> np.ndarray:
    """score_c = scale * <f, w_c> / ((|f| + eps) * (|w_c| + eps))."""
    f = np.atleast_2d(features)
    gf = np.linalg.norm(f, axis=1) + _NORM_EPS
    gw = np.linalg.norm(prototypes, axis=1) + _NORM_EPS
    logits = scale * (f @ prototypes.T) / (gf[:, None] * gw[None, :])
    return logits if features.ndim == 2 else logits[0]


class ProbeModel:
    """Conv stages + head with manually implemented gradients.

    ``params`` maps conv{i}_w / conv{i}_b / head_w / head_b to arrays.
    ``mean`` / ``std`` are the per-channel standardization statistics
    applied before the first stage.
    """

    def __init__(self, config: ProbeConfig, params: dict[str, np.ndarray],
                 mean: np.ndarray, std: np.ndarray):
        self.config = config
        self.params = params
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), _STD_FLOOR)
        self._token = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(cls, config: ProbeConfig) -> "ProbeModel":
        rng = np.random.default_rng(config.seed)
        dt = np.dtype(config.dtype)
        params: dict[str, np.ndarray] = {}
        c_in = config.in_channels
        for i, width in enumerate(config.widths):
            bound = math.sqrt(1.0 / (c_in * 9))
            params[f"conv{i}_w"] = rng.uniform(-bound, bound, (width, c_in, 3, 3)).astype(dt)
            params[f"conv{i}_b"] = np.zeros(width, dtype=dt)
            c_in = width
        bound = math.sqrt(1.0 / config.widths[-1])
        if config.head == "linear":
            params["head_w"] = rng.uniform(
                -bound, bound, (config.widths[-1], config.class_count)
            ).astype(dt)
            params["head_b"] = np.zeros(config.class_count, dtype=dt)
        else:
            params["head_w"] = rng.uniform(
                -bound, bound, (config.class_count, config.widths[-1])
            ).astype(dt)
        mean = np.zeros(config.in_channels)
        std = np.ones(config.in_channels)
        return cls(config, params, mean, std)

    def set_standardization(self, mean: np.ndarray, std: np.ndarray) -> None:
        if mean.shape != (self.config.in_channels,) or std.shape != mean.shape:
            raise ValueError("standardization stats must be per input channel")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), _STD_FLOOR)

    def mark_updated(self) -> None:
        """Invalidate caches produced before a parameter update."""
        self._token += 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Run a (B, C, H, W) batch; returns logits and the activation cache
        (all registered taps included)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {x.shape}"
            )
        xs = (x - self.mean[:, None, None].astype(self.dtype)) / self.std[
            :, None, None
        ].astype(self.dtype)
        cache: dict = {"token": self._token, "stages": [], "input_shape": x.shape}
        a = xs
        for i, stride in enumerate(self.config.strides):
            z, cols = _conv_forward(a, self.params[f"conv{i}_w"],
                                    self.params[f"conv{i}_b"], stride)
            act = np.maximum(z, 0)
            cache["stages"].append(
                {"cols": cols, "mask": z > 0, "act": act, "in_shape": a.shape, "stride": stride}
            )
            a = act
        f = a.mean(axis=(2, 3))
        cache["features"] = f
        if self.config.head == "linear":
            logits = f @ self.params["head_w"] + self.params["head_b"]
        else:
            logits = cosine_logits(f, self.params["head_w"], self.config.cosine_scale)
        cache["logits"] = logits
        return logits, cache

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict:
        """Analytic gradients for d(loss)/d(logits).

        Returns {"params": {...}, "input": dx, "taps": {block_i: dA_i}},
        where dA_i is the gradient w.r.t. the post-ReLU tap activation.
        """
        if cache.get("token") != self._token:
            raise StateError("stale activation cache: parameters changed since forward")
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        f = cache["features"]
        grads: dict[str, np.ndarray] = {}
        if self.config.head == "linear":
            grads["head_w"] = f.T @ dlogits
            grads["head_b"] = dlogits.sum(axis=0)
            df = dlogits @ self.params["head_w"].T
        else:
            df, grads["head_w"] = self._cosine_backward(f, dlogits)
        last = cache["stages"][-1]["act"]
        _, _, ho, wo = last.shape
        dact = np.broadcast_to(df[:, :, None, None], last.shape) / (ho * wo)
        dact = dact.astype(self.dtype)
        taps: dict[str, np.ndarray] = {}
        for i in range(len(cache["stages"]) - 1, -1, -1):
            st = cache["stages"][i]
            taps[f"block{i + 1}"] = dact
            dz = dact * st["mask"]
            dact, dw, db = _conv_backward(dz, st["cols"], self.params[f"conv{i}_w"],
                                          st["in_shape"], st["stride"])
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
        dx = dact / self.std[:, None, None].astype(self.dtype)
        return {"params": grads, "input": dx, "taps": taps}

    def _cosine_backward(self, f: np.ndarray, dlogits: np.ndarray):
        w = self.params["head_w"]
        s = self.config.cosine_scale
        rf = np.linalg.norm(f, axis=1)
        rw = np.linalg.norm(w, axis=1)
        gf = rf + _NORM_EPS
        gw = rw + _NORM_EPS
        rf_safe = np.where(rf > 0, rf, 1.0)
        rw_safe = np.where(rw > 0, rw, 1.0)
        dots = f @ w.T  # (B, K)
        t1 = dlogits * s / gw[None, :]
        df = (t1 / gf[:, None]) @ w
        df -= ((t1 * dots).sum(axis=1) / (gf**2 * rf_safe))[:, None] * f
        t2 = dlogits * s / gf[:, None]
        dw = t2.T @ f
        dw -= ((t2 * dots).sum(axis=0) / (gw**2 * rw_safe))[:, None] * w
        return df.astype(self.dtype), dw.astype(self.dtype)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and d(loss)/d(logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = logits.shape[0]
    loss = -float(logp[np.arange(b), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, dlogits


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 32
    lr: float = 0.05
    warmup_steps: int = 20
    weight_decay: float = 0.0
    seed: int = 0
    head: str = "cosine"
    widths: tuple[int, ...] = (32, 64, 128)
    strides: tuple[int, ...] = (1, 2, 2)
    cosine_scale: float = 16.0
    block_size: int = 8
    standardize: bool = True
    checkpoint_steps: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["strides"] = list(self.strides)
        d["checkpoint_steps"] = list(self.checkpoint_steps)
        return d


@dataclass
class TrainResult:
    model: ProbeModel
    history: list[dict] = field(default_factory=list)
    checkpoints: list[tuple[int, ProbeModel]] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.history[-1]["accuracy"] if self.history else float("nan")


def encode_dataset(data: LabeledDataset, block_size: int = 8):
    """Run every image through the DCT pipeline; returns (X, y) with X
    float32 of shape (N, 3*block_size^2, H_b, W_b)."""
    xs = []
    for i in range(len(data)):
        xs.append(encode_rgb(data.image(i), block_size=block_size).data.astype(np.float32))
    return np.stack(xs), data.labels


def _learning_rate(cfg: TrainConfig, step: int) -> float:
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _snapshot(model: ProbeModel) -> ProbeModel:
    clone = ProbeModel(
        model.config,
        {k: v.copy() for k, v in model.params.items()},
        model.mean.copy(),
        model.std.copy(),
    )
    return clone


def train_probe(data, cfg: TrainConfig) -> TrainResult:
    """Mini-batch gradient descent with linear warmup and cosine decay.

    ``data`` is a LabeledDataset (images are pushed through the DCT
    pipeline) or a pre-encoded (X, y) pair. Deterministic given cfg.seed.
    """
    if isinstance(data, LabeledDataset):
        x_all, y_all = encode_dataset(data, cfg.block_size)
        class_count = data.class_count
    else:
        x_all, y_all = data
        x_all = np.asarray(x_all)
        y_all = np.asarray(y_all)
        class_count = int(y_all.max()) + 1
    if x_all.ndim != 4:
        raise ValueError("training tensors must be (N, C, H, W)")

    config = ProbeConfig(
        in_channels=x_all.shape[1],
        class_count=class_count,
        widths=cfg.widths,
        strides=cfg.strides,
        head=cfg.head,
        cosine_scale=cfg.cosine_scale,
        block_size=cfg.block_size,
        seed=cfg.seed,
    )
    model = ProbeModel.initialize(config)
    if cfg.standardize:
        flat = x_all.astype(np.float64).transpose(1, 0, 2, 3).reshape(x_all.shape[1], -1)
        model.set_standardization(flat.mean(axis=1), flat.std(axis=1))

    rng = np.random.default_rng(cfg.seed)
    n = x_all.shape[0]
    order = rng.permutation(n)
    pos = 0
    result = TrainResult(model=model)
    want_ckpt = set(cfg.checkpoint_steps)
    if 0 in want_ckpt:
        result.checkpoints.append((0, _snapshot(model)))

    for step in range(cfg.steps):
        if pos + cfg.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        batch = order[pos : pos + cfg.batch_size]
        pos += cfg.batch_size
        xb, yb = x_all[batch], y_all[batch]
        logits, cache = model.forward(xb)
        loss, dlogits = softmax_cross_entropy(logits, yb)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step} (lr={cfg.lr})")
        grads = model.backward(cache, dlogits)["params"]
        lr = _learning_rate(cfg, step)
        for name, g in grads.items():
            p = model.params[name]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            p -= (lr * g).astype(p.dtype)
        model.mark_updated()
        acc = float((logits.argmax(axis=1) == yb).mean())
        result.history.append({"step": step, "lr": lr, "loss": loss, "accuracy": acc})
        if (step + 1) in want_ckpt:
            result.checkpoints.append((step + 1, _snapshot(model)))
    return result


def evaluate_accuracy(model: ProbeModel, x: np.ndarray, y: np.ndarray,
                      batch_size: int = 64) -> float:
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        logits, _ = model.forward(x[start : start + batch_size])
        hits += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
    return hits / x.shape[0]


# ---------------------------------------------------------------------------
# GradCAM and channel-wise heatmaps
# ---------------------------------------------------------------------------


@dataclass
class HeatmapSet:
    """Per-channel GradCAM maps at input resolution plus their spatial means."""

    maps: np.ndarray  # (C, H, W), non-negative
    scores: np.ndarray  # (C,)
    tap: str
    head: str
    checkpoint_id: str = ""


def gradcam(model: ProbeModel, x: np.ndarray, target_class: int, tap: str = "") -> np.ndarray:
    """ReLU of the gradient-weighted sum of tap activations, bilinearly
    upsampled to the input resolution. Raw values, no normalization."""
    tap = tap or model.config.tap_names[-1]
    if tap not in model.config.tap_names:
        raise ValueError(f"unknown tap {tap!r}; have {model.config.tap_names}")
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("gradcam expects a single (C, H, W) input")
    logits, cache = model.forward(x[None])
    if not 0 <= target_class < logits.shape[1]:
        raise ValueError(f"target class {target_class} out of range")
    dlogits = np.zeros_like(logits)
    dlogits[0, target_class] = 1.0
    out = model.backward(cache, dlogits)
    stage_idx = model.config.tap_names.index(tap)
    acts = cache["stages"][stage_idx]["act"][0]  # (F, h, w)
    grads = out["taps"][tap][0]
    alphas = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alphas, acts, axes=([0], [0])), 0.0)
    return _resize_plane(cam.astype(np.float64), x.shape[2], x.shape[1], "bilinear")


def channelwise_heatmap(model: ProbeModel, x, label: int, tap: str = "") -> HeatmapSet:
    """GradCAM once per candidate channel with all other channels zeroed.

    Candidates are processed independently (one forward/backward each), so
    any single map can be recomputed in isolation bit-for-bit.
    """
    if isinstance(x, FrequencyTensor):
        x = x.data
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != model.config.in_channels:
        raise ValueError(
            f"expected ({model.config.in_channels}, H, W) input, got {x.shape}"
        )
    c = x.shape[0]
    maps = np.empty((c, x.shape[1], x.shape[2]), dtype=np.float64)
    masked = np.zeros_like(x)
    for i in range(c):
        masked[:] = 0.0
        masked[i] = x[i]
        maps[i] = gradcam(model, masked, label, tap)
    return HeatmapSet(
        maps=maps,
        scores=maps.mean(axis=(1, 2)),
        tap=tap or model.config.tap_names[-1],
        head=model.config.head,
        checkpoint_id=model.config.hash(),
    )


def aggregate_scores(
    model: ProbeModel,
    data: LabeledDataset,
    tap: str = "",
    normalization: str = "joint_max",
    samples: int | None = None,
) -> np.ndarray:
    """Mean per-channel heatmap score over (a prefix of) the dataset.

    "joint_max" divides each image's maps jointly by their global maximum
    before averaging, which bounds the scores to [0, 1] while preserving
    relative channel importance; "raw" skips that step.
    """
    if normalization not in ("joint_max", "raw"):
        raise ValueError(f"unknown normalization {normalization!r}")
    count = len(data) if samples is None else min(samples, len(data))
    if count < 1:
        raise ValueError("need at least one sample")
    per_image = []
    for i in range(count):
        tensor = encode_rgb(data.image(i), block_size=model.config.block_size)
        hs = channelwise_heatmap(model, tensor.data.astype(np.float32), data.label(i), tap)
        scores = hs.scores
        if normalization == "joint_max":
            peak = float(hs.maps.max())
            if peak > 0:
                scores = scores / peak
        per_image.append(scores)
    return np.mean(np.stack(per_image), axis=0)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ProbeModel, path) -> None:
    arrays = dict(model.params)
    arrays["std_mean"] = model.mean
    arrays["std_std"] = model.std
    meta = {
        "kind": "probe-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "config_hash": model.config.hash(),
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> ProbeModel:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "probe-checkpoint":
        raise StateError(f"{path} is not a probe checkpoint")
    cfg_doc = dict(meta["config"])
    cfg_doc["widths"] = tuple(cfg_doc["widths"])
    cfg_doc["strides"] = tuple(cfg_doc["strides"])
    config = ProbeConfig(**cfg_doc)
    mean = arrays.pop("std_mean")
    std = arrays.pop("std_std")
    return ProbeModel(config, arrays, mean, std)
