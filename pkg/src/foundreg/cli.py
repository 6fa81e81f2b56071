"""Command-line surface binding the pipeline into reproducible experiments.

Usage:
    foundreg synth --spec configs/default-cardiac.json --seed 7 --out data/
    foundreg train --data data/ --config configs/train-desk.json --out runs/desk
    foundreg register --checkpoint runs/desk/checkpoint.fmc \
        --moving pair/fixed.fmv --fixed pair/moving.fmv --out reg/
    foundreg evaluate --data data/ --split test --checkpoint runs/desk/checkpoint.fmc \
        --reduction pca --out eval/
    foundreg export-channels --features feats.fmv --out channels.pgm
    foundreg features export --volume vol.fmv --profile toy-32 --stage raw --out feats.fmv
    foundreg features import --path feats.fmv

Every command that writes artifacts also writes a run.json capturing the
full configuration, seeds, and input hashes; rerunning with identical
inputs reproduces identical outputs.
"""
import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import fmv, synth, train as training
from .channels import PcaReducer, SubsetReducer, fit_pca, sample_channel_subset, subsample_voxel_vectors
from .encoder import PROFILES, ToySliceEncoder, assemble_features, encode_volume_raw, raw_slice_features
from .fields import warp_volume
from .gridops import warp_channels
from .rng import stable_seed
from .types import DeformationField, FeatureVolume, STAGE_RAW, STAGE_REDUCED, Volume


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_json(out_dir: Path, command: str, options: dict, inputs: list, outputs: list) -> None:
    run = {
        "command": command,
        "options": options,
        "inputs": {str(p): _sha256(p) for p in sorted(str(x) for x in inputs)},
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(run, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _validate_outputs(paths) -> None:
    for p in paths:
        if not Path(p).is_file() or Path(p).stat().st_size == 0:
            raise ValueError(f"expected artifact missing or empty: {p}")


def _note_device(device: str) -> None:
    if device != "cpu":
        print(f"note: device hint {device!r} recorded; this build computes on cpu", file=sys.stderr)


def _cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = synth.DatasetSpec.from_dict(json.load(fh))
    out_dir = Path(args.out)
    manifest = synth.write_dataset(out_dir, spec, args.seed)
    outputs = [out_dir / "manifest.json"]
    for entry in manifest["pairs"]:
        for name in synth.PAIR_FILES:
            outputs.append(out_dir / entry["dir"] / f"{name}.fmv")
    _validate_outputs(outputs)
    _write_run_json(out_dir, "synth", {"spec": str(args.spec), "seed": args.seed}, [args.spec], outputs)
    print(f"wrote {len(manifest['pairs'])} pairs to {out_dir}")
    return 0


def _cmd_train(args) -> int:
    _note_device(args.device)
    with open(args.config, encoding="utf-8") as fh:
        cfg = training.TrainConfig.from_dict(json.load(fh))
    if args.seed is not None:
        cfg = training.TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out_dir = Path(args.out)
    training.train(args.data, cfg, out_dir=out_dir, log_every=args.log_every)
    outputs = [out_dir / "checkpoint.fmc", out_dir / "config.json", out_dir / "log.jsonl"]
    _validate_outputs(outputs)
    inputs = [args.config, Path(args.data) / "manifest.json"]
    _write_run_json(out_dir, "train", {"config": cfg.to_dict(), "data": str(args.data)}, inputs, outputs)
    print(f"checkpoint written to {out_dir / 'checkpoint.fmc'}")
    return 0


def _reduced_pair_features(bundle, enc, mov: Volume, fix: Volume, reduction: str, seed: int,
                           feats_m: FeatureVolume | None, feats_f: FeatureVolume | None):
    """Raw slice features (computed or imported) -> c'-channel reduced pair."""
    profile = bundle.profile
    grid = profile.K // profile.stride

    def raw_for(vol: Volume, imported: FeatureVolume | None, tag: str) -> torch.Tensor:
        if imported is None:
            return raw_slice_features(vol.data, enc, profile.K)
        if imported.stage == STAGE_REDUCED:
            if imported.channels != profile.c_prime:
                raise ValueError(f"{tag}: reduced features have {imported.channels} channels, expected c'={profile.c_prime}")
        if imported.shape[0] != grid or imported.shape[1] != grid or imported.shape[2] != vol.shape[2]:
            raise ValueError(
                f"{tag}: feature grid {imported.shape} incompatible with K={profile.K} and volume depth {vol.shape[2]}"
            )
        return torch.from_numpy(np.array(imported.data))

    raw_m = raw_for(mov, feats_m, "moving features")
    raw_f = raw_for(fix, feats_f, "fixed features")
    stages = {
        "m": feats_m.stage if feats_m is not None else STAGE_RAW,
        "f": feats_f.stage if feats_f is not None else STAGE_RAW,
    }
    if stages["m"] != stages["f"]:
        raise ValueError("moving/fixed features must be at the same stage")
    if stages["m"] == STAGE_REDUCED:
        return raw_m, raw_f
    if raw_m.shape[0] != raw_f.shape[0]:
        raise ValueError(f"channel mismatch between sides: {raw_m.shape[0]} vs {raw_f.shape[0]}")
    if reduction == "pca":
        half = max(bundle.cfg.pca_max_samples // 2, profile.c_prime)
        samples = np.concatenate(
            [
                subsample_voxel_vectors(raw_m.numpy(), half, stable_seed(seed, "sub-m")),
                subsample_voxel_vectors(raw_f.numpy(), half, stable_seed(seed, "sub-f")),
            ]
        )
        reducer = PcaReducer(fit_pca(samples, profile.c_prime))
    else:
        reducer = SubsetReducer(sample_channel_subset(raw_m.shape[0], profile.c_prime, seed))
    return reducer(raw_m), reducer(raw_f)


def _cmd_register(args) -> int:
    _note_device(args.device)
    bundle, _, _ = training.load_checkpoint(args.checkpoint)
    mov = fmv.read_volume(args.moving)
    fix = fmv.read_volume(args.fixed)
    if mov.shape != fix.shape:
        raise ValueError(f"moving shape {mov.shape} != fixed shape {fix.shape}")
    enc = bundle.enc if args.encoder_seed is None else ToySliceEncoder(bundle.profile.c, seed=args.encoder_seed)
    feats_m = fmv.load_precomputed_features(args.moving_features) if args.moving_features else None
    feats_f = fmv.load_precomputed_features(args.fixed_features) if args.fixed_features else None
    red_m, red_f = _reduced_pair_features(bundle, enc, mov, fix, args.reduction, args.seed, feats_m, feats_f)
    offsets = ((bundle.profile.K - mov.shape[0]) // 2, (bundle.profile.K - mov.shape[1]) // 2)
    with torch.no_grad():
        asm = torch.stack(
            [
                assemble_features(red_m, offsets, mov.shape[:2], bundle.profile.K),
                assemble_features(red_f, offsets, mov.shape[:2], bundle.profile.K),
            ]
        )
        feats = bundle.block(asm)
        phi_t = bundle.head(feats[0], feats[1])
    field = DeformationField(phi_t.numpy())
    warped = warp_volume(mov, field, "trilinear")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmv.write_field(out_dir / "field.fmv", field, mov.spacing)
    fmv.write_volume(out_dir / "warped.fmv", warped)
    outputs = [out_dir / "field.fmv", out_dir / "warped.fmv"]
    _validate_outputs(outputs)
    inputs = [args.checkpoint, args.moving, args.fixed]
    inputs += [p for p in (args.moving_features, args.fixed_features) if p]
    options = {
        "checkpoint": str(args.checkpoint),
        "reduction": args.reduction,
        "seed": args.seed,
        "encoder_seed": args.encoder_seed,
    }
    _write_run_json(out_dir, "register", options, inputs, outputs)
    print(f"field + warped volume written to {out_dir}")
    return 0


_CSV_METRICS = ("mean_dice", "initial_dice", "hd95_mm", "sdlogj", "endpoint_error_vox", "initial_epe_vox", "time_s")


def _cmd_evaluate(args) -> int:
    _note_device(args.device)
    bundle, _, _ = training.load_checkpoint(args.checkpoint)
    enc = None
    if args.encoder_seed is not None:
        enc = ToySliceEncoder(bundle.profile.c, seed=args.encoder_seed)
    report = training.evaluate(args.data, args.split, bundle, reduction=args.reduction, eval_seed=args.seed, enc=enc)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std"])
        for key in _CSV_METRICS:
            writer.writerow([key, report["aggregate"][key]["mean"], report["aggregate"][key]["std"]])
    outputs = [out_dir / "metrics.json", out_dir / "metrics.csv"]
    _validate_outputs(outputs)
    options = {
        "checkpoint": str(args.checkpoint),
        "split": args.split,
        "reduction": args.reduction,
        "seed": args.seed,
        "encoder_seed": args.encoder_seed,
    }
    _write_run_json(out_dir, "evaluate", options, [args.checkpoint, Path(args.data) / "manifest.json"], outputs)
    agg = report["aggregate"]
    print(
        f"{args.split}: dice {agg['mean_dice']['mean']:.2f} (initial {agg['initial_dice']['mean']:.2f}), "
        f"hd95 {agg['hd95_mm']['mean']:.2f} mm, sdlogj {agg['sdlogj']['mean']:.4f}, "
        f"epe {agg['endpoint_error_vox']['mean']:.3f} vox"
    )
    return 0


def channel_grid_image(fv: FeatureVolume) -> np.ndarray:
    """Mid-depth slice of every channel, min-max normalized, tiled into a grid."""
    c, h, w, d = fv.data.shape
    cols = math.ceil(math.sqrt(c))
    rows = math.ceil(c / cols)
    grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
    mid = d // 2
    for i in range(c):
        tile = fv.data[i, :, :, mid].astype(np.float64)
        lo, hi = tile.min(), tile.max()
        scaled = np.zeros_like(tile) if hi <= lo else (tile - lo) / (hi - lo)
        r, col = divmod(i, cols)
        grid[r * h : (r + 1) * h, col * w : (col + 1) * w] = np.round(scaled * 255).astype(np.uint8)
    return grid


def _write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _cmd_export_channels(args) -> int:
    fv = fmv.read_features(args.features)
    image = channel_grid_image(fv)
    out_path = Path(args.out)
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_pgm(out_path, image)
    _validate_outputs([out_path])
    _write_run_json(out_dir, "export-channels", {"features": str(args.features)}, [args.features], [out_path])
    print(f"channel grid written to {out_path}")
    return 0


def _cmd_features_export(args) -> int:
    vol = fmv.read_volume(args.volume)
    profile = PROFILES[args.profile]
    enc = ToySliceEncoder(profile.c, seed=args.encoder_seed)
    raw = encode_volume_raw(vol, enc, profile)
    if args.stage == "raw":
        out_fv = raw
    else:
        raw_t = torch.from_numpy(np.array(raw.data))
        if args.reduction == "pca":
            samples = subsample_voxel_vectors(raw.data, 20000, stable_seed(args.seed, "sub"))
            reducer = PcaReducer(fit_pca(samples, profile.c_prime))
        else:
            reducer = SubsetReducer(sample_channel_subset(profile.c, profile.c_prime, args.seed))
        out_fv = FeatureVolume(reducer(raw_t).numpy(), STAGE_REDUCED)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmv.write_features(out_path, out_fv, vol.spacing)
    _validate_outputs([out_path])
    options = {
        "volume": str(args.volume),
        "profile": args.profile,
        "encoder_seed": args.encoder_seed,
        "stage": args.stage,
        "reduction": args.reduction,
        "seed": args.seed,
    }
    _write_run_json(out_path.parent, "features-export", options, [args.volume], [out_path])
    print(f"{out_fv.stage} features {out_fv.data.shape} written to {out_path}")
    return 0


def _cmd_features_import(args) -> int:
    fv = fmv.load_precomputed_features(args.path)
    header = fmv.read_header(args.path)
    print(
        f"{args.path}: stage {fv.stage}, shape {tuple(fv.data.shape)}, "
        f"spacing {tuple(header['spacing_mm'])}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foundreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec JSON")
    p.add_argument("--spec", required=True, help="dataset spec JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    p.add_argument("--config", required=True, help="train config JSON file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--log-every", type=int, default=0, help="print progress every N steps")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("register", help="register one volume pair with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--moving", required=True, help="volume to be warped (.fmv)")
    p.add_argument("--fixed", required=True, help="reference volume (.fmv)")
    p.add_argument("--moving-features", default=None, help="precomputed features for the moving side (.fmv)")
    p.add_argument("--fixed-features", default=None, help="precomputed features for the fixed side (.fmv)")
    p.add_argument("--reduction", choices=["pca", "subset"], default="pca")
    p.add_argument("--encoder-seed", type=int, default=None, help="swap in a different frozen encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reduction", choices=["pca", "random-subset"], default="pca")
    p.add_argument("--encoder-seed", type=int, default=None, help="swap in a different frozen encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-channels", help="export per-channel mid-slice grid as PGM")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_channels)

    p = sub.add_parser("features", help="features file I/O")
    fsub = p.add_subparsers(dest="features_command", required=True)
    pe = fsub.add_parser("export", help="encode a volume to a features .fmv")
    pe.add_argument("--volume", required=True)
    pe.add_argument("--profile", choices=sorted(PROFILES), default="toy-32")
    pe.add_argument("--encoder-seed", type=int, default=0)
    pe.add_argument("--stage", choices=["raw", "reduced"], default="raw")
    pe.add_argument("--reduction", choices=["pca", "subset"], default="pca")
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=_cmd_features_export)
    pi = fsub.add_parser("import", help="validate and summarize a features .fmv")
    pi.add_argument("--path", required=True)
    pi.set_defaults(func=_cmd_features_import)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
