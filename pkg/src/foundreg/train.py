"""Optimization protocol: Adam with polynomial lr decay, per-step channel
regularization, checkpointing, and evaluation orchestration.

Within a synthetic pair the stored ground-truth field maps the clean
phantom ("fixed") onto its deformed counterpart ("moving"), so the
network's moving/fixed inputs are pair.fixed / pair.moving respectively:
the predicted field warps pair.fixed onto pair.moving and is directly
comparable to gt_field.
"""
import json
import time
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np
import torch

from . import gridops, losses, metrics, synth
from .channels import (
    PcaReducer,
    SubsetReducer,
    fit_pca,
    sample_channel_subset,
    subsample_voxel_vectors,
)
from .encoder import (
    PROFILES,
    ConvBlock3D,
    EncoderConfig,
    ToySliceEncoder,
    assemble_features,
    raw_slice_features,
)
from .fields import warp_segmentation
from .head import PyramidConfig, RegistrationHead
from .rng import stable_seed
from .types import DeformationField

SUPERVISION_MODES = ("unsupervised", "weakly-supervised")
REDUCTION_MODES = ("random-subset", "pca")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    base_lr: float = 1e-4
    poly_power: float = 0.9
    batch_size: int = 1
    lambda0: float = 1.0
    lambda1: float = 0.0
    lambda2: float = 1.0
    supervision: str = "unsupervised"
    encoder_profile: str = "toy-32"
    encoder_seed: int = 0
    reduction_mode_train: str = "random-subset"
    reduction_mode_eval: str = "pca"
    ncc_window: int = 9
    ncc_eps: float = 1e-5
    grad_clip_norm: float = 1.0
    pca_max_samples: int = 20000
    levels: int = 5
    min_size: int = 4
    block_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 (pairwise registration) is supported")
        if self.supervision not in SUPERVISION_MODES:
            raise ValueError(f"unknown supervision {self.supervision!r}")
        if self.supervision == "unsupervised" and self.lambda1 != 0.0:
            raise ValueError("unsupervised training forces lambda1 = 0")
        if self.reduction_mode_train not in REDUCTION_MODES:
            raise ValueError(f"unknown train reduction mode {self.reduction_mode_train!r}")
        if self.reduction_mode_eval not in REDUCTION_MODES:
            raise ValueError(f"unknown eval reduction mode {self.reduction_mode_eval!r}")
        if self.encoder_profile not in PROFILES:
            raise ValueError(f"unknown encoder profile {self.encoder_profile!r}, expected one of {sorted(PROFILES)}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dc_fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def loss_weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda0, self.lambda1, self.lambda2)

    @property
    def ncc(self) -> losses.NccConfig:
        return losses.NccConfig(self.ncc_window, self.ncc_eps)


def lr_schedule(step: int, total_steps: int, base_lr: float, power: float) -> float:
    """Polynomial decay: base_lr * (1 - step/total_steps) ** power."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps) ** power


@dataclass
class ModelBundle:
    cfg: TrainConfig
    profile: EncoderConfig
    enc: ToySliceEncoder
    block: ConvBlock3D
    head: RegistrationHead


def build_models(cfg: TrainConfig) -> ModelBundle:
    profile = PROFILES[cfg.encoder_profile]
    enc = ToySliceEncoder(profile.c, seed=cfg.encoder_seed)
    block = ConvBlock3D(profile.c_prime, profile.n, hidden=cfg.block_hidden, seed=stable_seed(cfg.seed, "block-init"))
    head = RegistrationHead(
        profile.n,
        PyramidConfig(levels=cfg.levels, min_size=cfg.min_size),
        seed=stable_seed(cfg.seed, "head-init"),
    )
    return ModelBundle(cfg, profile, enc, block, head)


def _pca_reducer(raw_m: torch.Tensor, raw_f: torch.Tensor, c_prime: int, max_samples: int, seed: int) -> PcaReducer:
    """Fit one projection on voxel vectors pooled from both images of a pair."""
    half = max(max_samples // 2, c_prime)
    samples = np.concatenate(
        [
            subsample_voxel_vectors(raw_m.numpy(), half, stable_seed(seed, "sub-m")),
            subsample_voxel_vectors(raw_f.numpy(), half, stable_seed(seed, "sub-f")),
        ]
    )
    return PcaReducer(fit_pca(samples, c_prime))


def _train_reducer(cfg: TrainConfig, profile: EncoderConfig, step: int, raw_m, raw_f):
    if cfg.reduction_mode_train == "random-subset":
        sel = sample_channel_subset(profile.c, profile.c_prime, stable_seed(cfg.seed, "subset", step))
        return SubsetReducer(sel), list(sel.indices)
    reducer = _pca_reducer(raw_m, raw_f, profile.c_prime, cfg.pca_max_samples, stable_seed(cfg.seed, "pca", step))
    return reducer, None


class _PairCache:
    """Raw 2D slice features never change during training (frozen encoder),
    so they are computed once per pair."""

    def __init__(self, data_dir, entries, enc: ToySliceEncoder, K: int, supervised: bool):
        self.data_dir = data_dir
        self.entries = entries
        self.enc = enc
        self.K = K
        self.supervised = supervised
        self._items: dict[int, dict] = {}

    def __len__(self):
        return len(self.entries)

    def get(self, idx: int) -> dict:
        if idx not in self._items:
            pair = synth.load_pair(self.data_dir, self.entries[idx])
            mov_img = pair.fixed.data  # network-moving: the clean phantom
            fix_img = pair.moving.data  # network-fixed: its deformed counterpart
            item = {
                "pair": pair,
                "mov_img_t": torch.from_numpy(np.array(mov_img)),
                "fix_img_t": torch.from_numpy(np.array(fix_img)),
                "raw_m": raw_slice_features(mov_img, self.enc, self.K),
                "raw_f": raw_slice_features(fix_img, self.enc, self.K),
                "hw": mov_img.shape[:2],
                "offsets": ((self.K - mov_img.shape[0]) // 2, (self.K - mov_img.shape[1]) // 2),
            }
            if self.supervised:
                item["soft_m"] = losses.one_hot_labels(pair.fixed_seg)
                item["soft_f"] = losses.one_hot_labels(pair.moving_seg)
            self._items[idx] = item
        return self._items[idx]


def _forward_pair(item: dict, reducer, block: ConvBlock3D, head: RegistrationHead, profile: EncoderConfig):
    with torch.no_grad():
        red_m = reducer(item["raw_m"])
        red_f = reducer(item["raw_f"])
        if red_m.shape[0] != profile.c_prime:
            raise ValueError(f"reducer produced {red_m.shape[0]} channels, expected c'={profile.c_prime}")
        asm = torch.stack(
            [
                assemble_features(red_m, item["offsets"], item["hw"], profile.K),
                assemble_features(red_f, item["offsets"], item["hw"], profile.K),
            ]
        )
    feats = block(asm)
    return head(feats[0], feats[1])


def train(data_dir, cfg: TrainConfig, out_dir=None, log_every: int = 0):
    """Run the optimization loop; returns (ModelBundle, step log).

    Per step: draw a pair, draw a fresh channel reduction, encode both
    images, register, apply the combined loss, and take one Adam step at
    the scheduled learning rate.
    """
    manifest = synth.load_manifest(data_dir)
    entries = synth.split_entries(manifest, "train")
    bundle = build_models(cfg)
    supervised = cfg.supervision == "weakly-supervised"
    cache = _PairCache(data_dir, entries, bundle.enc, bundle.profile.K, supervised)
    params = list(bundle.block.parameters()) + list(bundle.head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.base_lr)
    enc_hash = bundle.enc.param_hash()
    log: list[dict] = []
    for step in range(cfg.total_steps):
        lr = lr_schedule(step, cfg.total_steps, cfg.base_lr, cfg.poly_power)
        for group in opt.param_groups:
            group["lr"] = lr
        item = cache.get(stable_seed(cfg.seed, "pair", step) % len(cache))
        reducer, subset = _train_reducer(cfg, bundle.profile, step, item["raw_m"], item["raw_f"])
        phi = _forward_pair(item, reducer, bundle.block, bundle.head, bundle.profile)
        warped = gridops.warp_channels(item["mov_img_t"][None], phi)[0]
        warped_soft = gridops.warp_channels(item["soft_m"], phi) if supervised else None
        total, breakdown = losses.total_loss(
            warped,
            item["fix_img_t"],
            warped_soft,
            item.get("soft_f"),
            phi,
            cfg.loss_weights,
            cfg.ncc,
        )
        if not np.isfinite(breakdown["total"]):
            raise FloatingPointError(f"non-finite loss at step {step}: {breakdown}")
        opt.zero_grad(set_to_none=True)
        total.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip_norm)
        opt.step()
        entry = {"step": step, "lr": lr, **breakdown}
        if subset is not None:
            entry["subset"] = subset
        log.append(entry)
        if log_every and (step % log_every == 0 or step == cfg.total_steps - 1):
            print(f"step {step:5d}  total {breakdown['total']:+.4f}  ncc {breakdown['ncc']:+.4f}  lr {lr:.2e}")
    if bundle.enc.param_hash() != enc_hash:
        raise RuntimeError("frozen 2D encoder parameters changed during training")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(out_dir / "log.jsonl", "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        save_checkpoint(out_dir / "checkpoint.fmc", cfg.total_steps, bundle, opt)
    return bundle, opt, log


CKPT_MAGIC = b"FMIRCKP1"


def _named_params(bundle: ModelBundle) -> list[tuple[str, torch.nn.Parameter]]:
    out = [(f"block.{k}", p) for k, p in bundle.block.named_parameters()]
    out += [(f"head.{k}", p) for k, p in bundle.head.named_parameters()]
    return out


def save_checkpoint(path, step: int, bundle: ModelBundle, optimizer=None) -> None:
    """Container: magic, length-prefixed JSON metadata, named float32 blobs."""
    blobs: list[tuple[str, np.ndarray]] = []
    for prefix, module in (("block", bundle.block), ("head", bundle.head)):
        for k, v in module.state_dict().items():
            blobs.append((f"{prefix}.{k}", v.detach().numpy().astype(np.float32)))
    optim_meta = []
    if optimizer is not None:
        for name, p in _named_params(bundle):
            st = optimizer.state.get(p)
            if not st:
                continue
            blobs.append((f"optim.{name}.exp_avg", st["exp_avg"].detach().numpy().astype(np.float32)))
            blobs.append((f"optim.{name}.exp_avg_sq", st["exp_avg_sq"].detach().numpy().astype(np.float32)))
            optim_meta.append({"param": name, "step": float(st["step"])})
    header = {
        "format": 1,
        "step": step,
        "config": bundle.cfg.to_dict(),
        "blobs": [{"name": n, "shape": list(a.shape)} for n, a in blobs],
        "optim": optim_meta,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(len(hb).to_bytes(4, "little"))
        fh.write(hb)
        for _, a in blobs:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild (ModelBundle, optimizer, step) from a checkpoint container."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        hlen = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for meta in header["blobs"]:
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"{path}: truncated blob {meta['name']}")
            arrays[meta["name"]] = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"])
    cfg = TrainConfig.from_dict(header["config"])
    bundle = build_models(cfg)
    for prefix, module in (("block", bundle.block), ("head", bundle.head)):
        state = {
            k: torch.from_numpy(arrays[f"{prefix}.{k}"].copy())
            for k in module.state_dict()
        }
        module.load_state_dict(state)
    params = list(bundle.block.parameters()) + list(bundle.head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.base_lr)
    if header["optim"]:
        names = [n for n, _ in _named_params(bundle)]
        steps = {m["param"]: m["step"] for m in header["optim"]}
        state = {}
        for i, name in enumerate(names):
            if name in steps:
                state[i] = {
                    "step": torch.tensor(steps[name]),
                    "exp_avg": torch.from_numpy(arrays[f"optim.{name}.exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(arrays[f"optim.{name}.exp_avg_sq"].copy()),
                }
        opt.load_state_dict({"state": state, "param_groups": opt.state_dict()["param_groups"]})
    return bundle, opt, header["step"]


def _eval_reducer(reduction: str, profile: EncoderConfig, raw_m, raw_f, eval_seed: int, pair_id: str, max_samples: int):
    if reduction == "pca":
        return _pca_reducer(raw_m, raw_f, profile.c_prime, max_samples, stable_seed(eval_seed, "eval-pca", pair_id))
    sel = sample_channel_subset(profile.c, profile.c_prime, stable_seed(eval_seed, "eval-subset", pair_id))
    return SubsetReducer(sel)


def _agg(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def evaluate(
    data_dir,
    split: str,
    bundle: ModelBundle,
    reduction: str = "pca",
    eval_seed: int = 0,
    enc: ToySliceEncoder | None = None,
) -> dict:
    """Register every pair of a split and aggregate the quality metrics.

    Per-pair timing covers encoding + channel reduction + head inference.
    `enc` swaps in a different frozen 2D encoder (channel alignment happens
    through the reduction step).
    """
    if reduction not in REDUCTION_MODES:
        raise ValueError(f"unknown reduction mode {reduction!r}")
    enc = bundle.enc if enc is None else enc
    profile = PROFILES[bundle.cfg.encoder_profile]
    manifest = synth.load_manifest(data_dir)
    entries = synth.split_entries(manifest, split)
    pair_reports = []
    missing_hd95 = 0
    with torch.no_grad():
        for entry in entries:
            pair = synth.load_pair(data_dir, entry)
            mov_img = pair.fixed.data  # see module docstring for the role mapping
            fix_img = pair.moving.data
            t0 = time.perf_counter()
            raw_m = raw_slice_features(mov_img, enc, profile.K)
            raw_f = raw_slice_features(fix_img, enc, profile.K)
            reducer = _eval_reducer(reduction, profile, raw_m, raw_f, eval_seed, entry["id"], bundle.cfg.pca_max_samples)
            item = {
                "raw_m": raw_m,
                "raw_f": raw_f,
                "hw": mov_img.shape[:2],
                "offsets": ((profile.K - mov_img.shape[0]) // 2, (profile.K - mov_img.shape[1]) // 2),
            }
            phi_t = _forward_pair(item, reducer, bundle.block, bundle.head, profile)
            elapsed = time.perf_counter() - t0
            phi = DeformationField(phi_t.numpy())
            warped_seg = warp_segmentation(pair.fixed_seg, phi)
            per_label, mean_dice = metrics.dice_score(warped_seg, pair.moving_seg)
            hd_per_label = {}
            missing = []
            for label in sorted(set(warped_seg.label_set) | set(pair.moving_seg.label_set)):
                try:
                    hd_per_label[label] = metrics.hd95(warped_seg, pair.moving_seg, label)
                except ValueError:
                    missing.append(label)
            missing_hd95 += len(missing)
            report = metrics.MetricsReport(
                per_label_dice=per_label,
                mean_dice=mean_dice,
                per_label_hd95=hd_per_label,
                hd95_mm=float(np.mean(list(hd_per_label.values()))) if hd_per_label else None,
                sdlogj=metrics.sdlogj(phi),
                endpoint_error_vox=metrics.endpoint_error(phi, pair.gt_field),
                time_s=elapsed,
                hd95_missing_labels=tuple(missing),
            )
            initial_dice = metrics.dice_score(pair.fixed_seg, pair.moving_seg)[1]
            initial_epe = metrics.endpoint_error(
                DeformationField(np.zeros_like(pair.gt_field.disp)), pair.gt_field
            )
            pair_reports.append(
                {
                    "id": entry["id"],
                    "family": entry["family"],
                    "initial_dice": initial_dice,
                    "initial_epe_vox": initial_epe,
                    **report.to_dict(),
                }
            )
    aggregate = {
        "mean_dice": _agg([r["mean_dice"] for r in pair_reports]),
        "initial_dice": _agg([r["initial_dice"] for r in pair_reports]),
        "hd95_mm": _agg([r["hd95_mm"] for r in pair_reports if r["hd95_mm"] is not None]),
        "sdlogj": _agg([r["sdlogj"] for r in pair_reports]),
        "endpoint_error_vox": _agg([r["endpoint_error_vox"] for r in pair_reports]),
        "initial_epe_vox": _agg([r["initial_epe_vox"] for r in pair_reports]),
        "time_s": _agg([r["time_s"] for r in pair_reports]),
    }
    return {
        "split": split,
        "reduction": reduction,
        "eval_seed": eval_seed,
        "n_pairs": len(pair_reports),
        "pairs": pair_reports,
        "aggregate": aggregate,
        "warnings": {"hd95_missing_labels": missing_hd95},
    }
