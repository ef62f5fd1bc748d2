"""Command-line pipeline driver.

Every subcommand writes its resolved run configuration as
``runconfig.json`` next to its outputs; re-running with the same
configuration reproduces every data file byte for byte (nothing here
embeds timestamps). Exit codes: 0 success, 2 usage or input error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import block_dct, image_io, probe, selection, spectrum, tokenizer
from .colorspace import upsample_chroma, ycbcr_to_rgb
from .errors import FormatError, StateError, TrainingError

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")

# paper-style resize study: ratio -> target size for 64-pixel sources
RESIZE_RATIO_SIZES = {1: 64, 2: 128, 4: 256, 8: 448}


def _write_runconfig(out_dir: Path, command: str, params: dict) -> None:
    doc = {"command": command, "params": params}
    (out_dir / "runconfig.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )


def _list_images(in_dir: Path) -> list[tuple[Path, int | None]]:
    manifest = in_dir / "manifest.tsv"
    if manifest.is_file():
        ds = image_io.read_manifest(manifest)
        return [(Path(ref), int(lbl)) for ref, lbl in ds.items]
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [(p, None) for p in files]


def _list_tensors(tensor_dir: Path) -> list[Path]:
    files = sorted(tensor_dir.glob("*.dft"))
    if not files:
        raise ValueError(f"no .dft tensors in {tensor_dir}")
    return files


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


def cmd_encode(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    entries = _list_images(in_dir)
    if not entries:
        raise ValueError(f"no input images in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    lines = []
    for path, label in entries:
        try:
            img = image_io.load_image(path)
            if args.size:
                img = image_io.resize(img, args.size, args.size, args.resize_method)
            tensor = block_dct.encode_rgb(img, args.block, args.chroma_upsample)
            name = path.stem + ".dft"
            block_dct.save_tensor(tensor, out_dir / name)
            lines.append(name if label is None else f"{name}\t{label}")
        except (ValueError, FormatError, OSError) as e:
            failures += 1
            print(f"encode: {path}: {e}", file=sys.stderr)
    (out_dir / "tensors.tsv").write_text("\n".join(lines) + "\n")
    _write_runconfig(
        out_dir,
        "encode",
        {
            "in_dir": str(in_dir),
            "size": args.size,
            "block": args.block,
            "chroma_upsample": args.chroma_upsample,
            "resize_method": args.resize_method,
        },
    )
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    channels = [int(c) for c in args.channels.split(",")]
    ds = image_io.synth_dataset(
        seed=args.seed,
        n=args.n,
        class_count=args.classes,
        informative_channels=channels,
        size=args.size,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    image_io.write_manifest(ds, out_dir, fmt=args.format)
    _write_runconfig(
        out_dir,
        "synth",
        {
            "seed": args.seed,
            "n": args.n,
            "classes": args.classes,
            "channels": channels,
            "size": args.size,
            "format": args.format,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# train-probe
# ---------------------------------------------------------------------------


def _train_config_from_args(args) -> probe.TrainConfig:
    return probe.TrainConfig(
        steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        warmup_steps=args.warmup,
        weight_decay=args.weight_decay,
        seed=args.seed,
        head=args.head,
        widths=tuple(int(w) for w in args.widths.split(",")),
        block_size=args.block,
        checkpoint_steps=tuple(
            int(s) for s in args.checkpoint_steps.split(",") if s
        ),
    )


def cmd_train_probe(args) -> int:
    out_dir = Path(args.out_dir)
    data = image_io.read_manifest(Path(args.data))
    cfg = _train_config_from_args(args)
    if len(cfg.widths) != 3:
        raise ValueError("expected three stage widths")
    result = probe.train_probe(data, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe.save_checkpoint(result.model, out_dir / "probe.ckpt")
    for step, model in result.checkpoints:
        probe.save_checkpoint(model, out_dir / f"probe_step{step:05d}.ckpt")
    with (out_dir / "train_log.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "lr", "loss", "accuracy"])
        for row in result.history:
            writer.writerow(
                [row["step"], _fmt(row["lr"]), _fmt(row["loss"]), _fmt(row["accuracy"])]
            )
    _write_runconfig(out_dir, "train-probe", {"data": str(args.data), **cfg.to_dict()})
    return 0


# ---------------------------------------------------------------------------
# heatmap
# ---------------------------------------------------------------------------


def _scores_csv(path: Path, scores: np.ndarray, block_size: int) -> None:
    descs = block_dct.channel_descriptors(block_size)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel_index", "component", "u", "v", "score"])
        for i, d in enumerate(descs):
            writer.writerow([i, d.component, d.u, d.v, _fmt(scores[i])])


def _grid_csv(path: Path, scores: np.ndarray, block_size: int) -> None:
    n = block_size
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["component", "u"] + [f"v{v}" for v in range(n)])
        for k, comp in enumerate(block_dct.COMPONENTS):
            grid = scores[k * n * n : (k + 1) * n * n].reshape(n, n)
            for u in range(n):
                writer.writerow([comp, u] + [_fmt(x) for x in grid[u]])


def _read_scores_csv(path: Path) -> tuple[np.ndarray, int]:
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise FormatError(f"empty scores file {path}")
    try:
        pairs = [(int(r["channel_index"]), float(r["score"])) for r in rows]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad scores file {path}: {e}") from e
    scores = np.zeros(len(pairs))
    for i, s in pairs:
        scores[i] = s
    n = round((len(pairs) / 3) ** 0.5)
    if 3 * n * n != len(pairs):
        raise FormatError(f"{path}: channel count {len(pairs)} is not 3*N^2")
    return scores, n


def cmd_heatmap(args) -> int:
    out_dir = Path(args.out_dir)
    model = probe.load_checkpoint(Path(args.checkpoint))
    data = image_io.read_manifest(Path(args.data))
    tap = args.tap or model.config.tap_names[-1]
    scores = probe.aggregate_scores(
        model, data, tap=tap, normalization=args.normalization, samples=args.samples
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    _scores_csv(out_dir / "scores.csv", scores, model.config.block_size)
    _grid_csv(out_dir / "grid.csv", scores, model.config.block_size)
    if args.maps:
        tensor = block_dct.encode_rgb(data.image(0), model.config.block_size)
        hs = probe.channelwise_heatmap(
            model, tensor.data.astype(np.float32), data.label(0), tap
        )
        peak = float(hs.maps.max())
        scale = 255.0 / peak if peak > 0 else 0.0
        maps_dir = out_dir / "maps"
        maps_dir.mkdir(exist_ok=True)
        for i in range(hs.maps.shape[0]):
            image_io.save_pgm(hs.maps[i] * scale, maps_dir / f"map_{i:03d}.pgm")
    _write_runconfig(
        out_dir,
        "heatmap",
        {
            "data": str(args.data),
            "checkpoint": str(args.checkpoint),
            "tap": tap,
            "normalization": args.normalization,
            "samples": args.samples,
            "maps": bool(args.maps),
        },
    )
    return 0


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def cmd_select(args) -> int:
    out_dir = Path(args.out_dir)
    scores, n = _read_scores_csv(Path(args.scores))
    if args.square:
        sides = [int(s) for s in args.square.split(",")]
        if len(sides) != 3:
            raise ValueError("--square takes sY,sCb,sCr")
        sel = selection.select_square(n, *sides)
    else:
        sel = selection.select_by_threshold(scores, args.threshold, block_size=n)
    out_dir.mkdir(parents=True, exist_ok=True)
    selection.save_selection(sel, out_dir / "selection.json")
    _write_runconfig(
        out_dir,
        "select",
        {"scores": str(args.scores), "threshold": args.threshold, "square": args.square},
    )
    return 0


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


def _plane_energy(img) -> float:
    return float(np.sum(img.y**2) + np.sum(img.cb**2) + np.sum(img.cr**2))


def cmd_reconstruct(args) -> int:
    out_dir = Path(args.out_dir)
    sel = selection.load_selection(Path(args.selection))
    tensor_files = _list_tensors(Path(args.tensors))
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in tensor_files:
        t = block_dct.load_tensor(path)
        full = block_dct.decode(t)
        kept = block_dct.decode(selection.zero_fill(selection.apply_selection(t, sel)))
        res_energy = float(
            np.sum((full.y - kept.y) ** 2)
            + np.sum((full.cb - kept.cb) ** 2)
            + np.sum((full.cr - kept.cr) ** 2)
        )
        dropped = selection.coefficient_energy(t, sel.dropped)
        rel = abs(res_energy - dropped) / dropped if dropped > 0 else 0.0
        full_rgb = ycbcr_to_rgb(upsample_chroma(full))
        kept_rgb = ycbcr_to_rgb(upsample_chroma(kept))
        residual = np.clip(0.5 + full_rgb.as_float() - kept_rgb.as_float(), 0.0, 1.0)
        stem = path.stem
        image_io.save_image(kept_rgb, out_dir / f"{stem}_recon.{args.format}")
        image_io.save_image(
            image_io.RgbImage(residual), out_dir / f"{stem}_residual.{args.format}"
        )
        value = image_io.psnr(full_rgb.as_uint8(), kept_rgb.as_uint8())
        rows.append([stem, _fmt(value), _fmt(res_energy), _fmt(dropped), _fmt(rel)])
    with (out_dir / "psnr.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "psnr", "residual_energy", "dropped_energy", "rel_err"])
        writer.writerows(rows)
    _write_runconfig(
        out_dir,
        "reconstruct",
        {"tensors": str(args.tensors), "selection": str(args.selection), "format": args.format},
    )
    return 0


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


def cmd_energy(args) -> int:
    out_dir = Path(args.out_dir)
    tensors = (block_dct.load_tensor(p) for p in _list_tensors(Path(args.tensors)))
    profile = spectrum.channel_energy(tensors)
    out_dir.mkdir(parents=True, exist_ok=True)
    spectrum.profile_to_csv(profile, out_dir / "energy.csv")
    zz = spectrum.zigzag_profile(profile)
    order = block_dct.zigzag_order(profile.block_size)
    with (out_dir / "zigzag.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["component", "zigzag_pos", "u", "v", "energy"])
        n = profile.block_size
        for comp in block_dct.COMPONENTS:
            for pos, flat in enumerate(order):
                writer.writerow([comp, pos, flat // n, flat % n, _fmt(zz[comp][pos])])
    _write_runconfig(out_dir, "energy", {"tensors": str(args.tensors)})
    return 0


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------


def cmd_embed(args) -> int:
    out_dir = Path(args.out_dir)
    sel = selection.load_selection(Path(args.selection))
    tensor_files = _list_tensors(Path(args.tensors))
    c_in = len(sel.kept)
    weights, bias = tokenizer.init_linear(c_in, args.dim, seed=args.seed)
    attn = None
    if args.attention:
        ca_channels = c_in if args.attention_position == "before" else args.dim
        attn = tokenizer.init_coord_attention(ca_channels, args.reduction, seed=args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in tensor_files:
        t = block_dct.load_tensor(path)
        dense = selection.apply_selection(t, sel)
        x = dense.data.astype(np.float32)
        if attn is not None and args.attention_position == "before":
            x = tokenizer.coordinate_attention(x, attn)
        grid = tokenizer.dense_embed(x, weights, bias)
        out = grid.tokens.T.reshape(args.dim, grid.grid_h, grid.grid_w)
        if attn is not None and args.attention_position == "after":
            out = tokenizer.coordinate_attention(out, attn)
        block_dct.save_array(out.astype(np.float32), out_dir / (path.stem + ".dft"))
    arrays = {"embed_w": weights, "embed_b": bias}
    if attn is not None:
        arrays.update({f"attn_{k}": v for k, v in attn.as_dict().items()})
    from .arrayfile import save_arrays

    save_arrays(out_dir / "embed_weights.narr", arrays, {"kind": "embed-weights"})
    _write_runconfig(
        out_dir,
        "embed",
        {
            "tensors": str(args.tensors),
            "selection": str(args.selection),
            "dim": args.dim,
            "seed": args.seed,
            "attention": bool(args.attention),
            "attention_position": args.attention_position,
            "reduction": args.reduction,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# repro recipes
# ---------------------------------------------------------------------------

_FIG5_RECIPE = {
    "seed": 0,
    "n": 192,
    "classes": 2,
    "channels": [0, 5],
    "size": 32,
    "steps": 160,
    "batch": 32,
    "lr": 0.08,
    "warmup": 16,
    "weight_decay": 1e-4,
    "widths": (16, 32, 64),
    "samples": 48,
}

TABLE3_THRESHOLDS = (0.08, 0.07, 0.06, 0.03, 0.022, 0.02, 0.01, 0.0)


def _fig5_scores(out_dir: Path, seed: int) -> np.ndarray:
    r = _FIG5_RECIPE
    ds = image_io.synth_dataset(
        seed=seed,
        n=r["n"],
        class_count=r["classes"],
        informative_channels=list(r["channels"]),
        size=r["size"],
    )
    cfg = probe.TrainConfig(
        steps=r["steps"],
        batch_size=r["batch"],
        lr=r["lr"],
        warmup_steps=r["warmup"],
        weight_decay=r["weight_decay"],
        seed=seed,
        widths=r["widths"],
    )
    result = probe.train_probe(ds, cfg)
    probe.save_checkpoint(result.model, out_dir / "probe.ckpt")
    return probe.aggregate_scores(result.model, ds, samples=r["samples"])


def cmd_repro(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.recipe == "fig5":
        scores = _fig5_scores(out_dir, args.seed)
        _scores_csv(out_dir / "scores.csv", scores, 8)
        _grid_csv(out_dir / "grid.csv", scores, 8)
    elif args.recipe == "table3":
        if args.scores:
            scores, _ = _read_scores_csv(Path(args.scores))
        else:
            scores = _fig5_scores(out_dir, args.seed)
        with (out_dir / "threshold_sweep.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "channels"])
            for t in TABLE3_THRESHOLDS:
                sel = selection.select_by_threshold(scores, t)
                writer.writerow([_fmt(t), len(sel.kept)])
            writer.writerow(["all", len(scores)])
    elif args.recipe == "table5-shapes":
        img = image_io.natural_test_image(args.seed, size=64)
        with (out_dir / "shapes.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["resize_ratio", "image_size", "channels", "grid_h", "grid_w"])
            for ratio, size in sorted(RESIZE_RATIO_SIZES.items()):
                resized = image_io.resize(img, size, size, "bilinear")
                t = block_dct.encode_rgb(resized)
                writer.writerow([ratio, size, t.channels, t.grid_height, t.grid_width])
    else:
        raise ValueError(f"unknown recipe {args.recipe!r}")
    _write_runconfig(
        out_dir,
        "repro",
        {"recipe": args.recipe, "seed": args.seed, "scores": args.scores},
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqtok",
        description="Block-DCT frequency tokenization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="images -> frequency tensor files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--size", type=int, default=None, help="resize to SIZE x SIZE first")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--chroma-upsample", choices=["nearest", "bilinear"], default="nearest")
    p.add_argument("--resize-method", choices=["bilinear", "nearest"], default="bilinear")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--channels", default="0,5", help="informative channel indices")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--format", choices=["png", "ppm"], default="png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-probe", help="train the channel-scoring probe")
    p.add_argument("--data", required=True, help="manifest.tsv of labeled images")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--head", choices=["cosine", "linear"], default="cosine")
    p.add_argument("--widths", default="32,64,128")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--checkpoint-steps", default="", help="comma-separated steps to snapshot")
    p.set_defaults(func=cmd_train_probe)

    p = sub.add_parser("heatmap", help="aggregate channel-wise GradCAM scores")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--tap", default="", help="activation tap (default: last block)")
    p.add_argument("--normalization", choices=["joint_max", "raw"], default="joint_max")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--maps", action="store_true", help="dump per-channel PGM maps of image 0")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("select", help="scores -> channel selection JSON")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--threshold", type=float, default=None)
    group.add_argument("--square", default=None, help="sY,sCb,sCr square sides")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("reconstruct", help="inverse-transform kept channels; residuals + PSNR")
    p.add_argument("--tensors", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--format", choices=["ppm", "png"], default="ppm")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("energy", help="per-channel energy profile CSVs")
    p.add_argument("--tensors", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("embed", help="dense tensors -> token grids")
    p.add_argument("--tensors", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--dim", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attention", action="store_true")
    p.add_argument("--attention-position", choices=["before", "after"], default="before")
    p.add_argument("--reduction", type=int, default=2)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("repro", help="pinned-seed figure/table recipes")
    p.add_argument("recipe", choices=["fig5", "table3", "table5-shapes"])
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scores", default=None, help="reuse scores.csv for table3")
    p.set_defaults(func=cmd_repro)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as e:
        print(f"freqtok {args.command}: numeric failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, FormatError, StateError, OSError) as e:
        print(f"freqtok {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
