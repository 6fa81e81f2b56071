"""Seeded synthetic phantoms and smooth ground-truth deformations.

Two phantom families stand in for distinct acquisition domains: nested
ellipsoidal shells ("cardiac-like") and scattered disjoint blobs
("abdomen-like"), with deliberately different intensity statistics so
cross-family evaluation probes a real domain shift.  Pairs are built by
deforming a phantom with a known smooth field, so every sample carries an
exact ground-truth transform.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fields, fmv
from .rng import stable_seed
from .types import DeformationField, Segmentation, Volume

FAMILIES = ("cardiac-like", "abdomen-like")


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int]
    family: str = "cardiac-like"
    labels: int = 3
    noise_sigma: float = 0.03
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.labels < 1:
            raise ValueError(f"label count must be >= 1, got {self.labels}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class PairSample:
    fixed: Volume
    moving: Volume
    fixed_seg: Segmentation
    moving_seg: Segmentation
    gt_field: DeformationField
    seed: int


def _ellipsoid_mask(shape, center, radii) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(s, dtype=np.float64) for s in shape), indexing="ij")
    q = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return q <= 1.0


def _cardiac_phantom(spec: PhantomSpec, rng: np.random.Generator):
    shape = np.asarray(spec.shape, dtype=np.float64)
    center = shape / 2.0 * (1.0 + rng.uniform(-0.06, 0.06, size=3))
    radii = shape * np.array([0.38, 0.38, 0.42]) * rng.uniform(0.9, 1.1, size=3)
    seg = np.zeros(spec.shape, dtype=np.int32)
    denom = max(spec.labels - 1, 1)
    for l in range(1, spec.labels + 1):
        scale = 1.0 - 0.55 * (l - 1) / denom if spec.labels > 1 else 1.0
        mask = _ellipsoid_mask(spec.shape, center, np.maximum(radii * scale, 1e-6))
        if not mask.any():
            raise ValueError(f"label {l} has no representable region for shape {spec.shape}")
        seg[mask] = l
    return seg


def _abdomen_phantom(spec: PhantomSpec, rng: np.random.Generator):
    shape = np.asarray(spec.shape, dtype=np.float64)
    seg = np.zeros(spec.shape, dtype=np.int32)
    placed = []  # (center, radii)
    for l in range(1, spec.labels + 1):
        for attempt in range(200):
            frac = rng.uniform(0.10, 0.16, size=3)
            radii = np.maximum(shape * frac, 1.2)
            lo = radii + 1.0
            hi = shape - 1.0 - radii
            if np.any(hi <= lo):
                raise ValueError(f"label {l} has no representable region for shape {spec.shape}")
            center = rng.uniform(lo, hi)
            ok = all(
                np.linalg.norm((center - c0) / (radii + r0)) > 1.0 for c0, r0 in placed
            )
            if ok:
                break
        else:
            raise ValueError(f"could not place {spec.labels} disjoint blobs in shape {spec.shape}")
        mask = _ellipsoid_mask(spec.shape, center, radii)
        if not mask.any():
            raise ValueError(f"label {l} has no representable region for shape {spec.shape}")
        seg[mask] = l
        placed.append((center, radii))
    return seg


# per-family intensity bands; the families are kept statistically far apart
_BANDS = {
    "cardiac-like": {"background": 0.08, "lo": 0.45, "hi": 0.95},
    "abdomen-like": {"background": 0.35, "lo": 0.52, "hi": 0.80},
}


# additive texture: (correlation length in voxels, amplitude in units of
# sigma_n); a fine and a coarse component, like real anatomy rather than
# per-voxel speckle, so local similarity has usable capture range
_TEXTURE_SCALES = ((1.5, 1.0), (4.0, 2.0))


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    noise = rng.standard_normal(shape)
    kernel = _gaussian_kernel(sigma)
    for axis in (0, 1, 2):
        noise = ndimage.convolve1d(noise, kernel, axis=axis, mode="nearest")
    return noise / noise.std()


def gen_phantom(spec: PhantomSpec, seed: int) -> tuple[Volume, Segmentation]:
    """Deterministic phantom: labeled smooth regions + per-label intensity bands
    + multi-scale additive texture of overall level sigma_n."""
    rng = np.random.default_rng(seed)
    if spec.family == "cardiac-like":
        seg = _cardiac_phantom(spec, rng)
    else:
        seg = _abdomen_phantom(spec, rng)
    bands = _BANDS[spec.family]
    denom = max(spec.labels - 1, 1)
    lut = np.array(
        [bands["background"]]
        + [bands["lo"] + (bands["hi"] - bands["lo"]) * (l - 1) / denom for l in range(1, spec.labels + 1)],
        dtype=np.float64,
    )
    data = lut[seg]
    if spec.noise_sigma > 0:
        for sigma, amp in _TEXTURE_SCALES:
            data = data + _smooth_noise(rng, spec.shape, sigma) * (amp * spec.noise_sigma)
    vol = Volume(data.astype(np.float32), spec.spacing_mm)
    return vol, Segmentation(seg, tuple(range(1, spec.labels + 1)), spec.spacing_mm)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gen_smooth_field(shape, max_magnitude: float, smooth_sigma: float, seed: int) -> DeformationField:
    """Gaussian-smoothed seeded noise, rescaled so the max displacement norm
    equals max_magnitude (voxels)."""
    if max_magnitude < 0:
        raise ValueError(f"max_magnitude must be >= 0, got {max_magnitude}")
    if smooth_sigma <= 0:
        raise ValueError(f"smooth_sigma must be > 0, got {smooth_sigma}")
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((3, *shape))
    kernel = _gaussian_kernel(smooth_sigma)
    # zero boundary: displacements taper off toward the volume border, so the
    # peak (which sets the rescaling) sits on the interior structures
    for axis in (1, 2, 3):
        u = ndimage.convolve1d(u, kernel, axis=axis, mode="constant", cval=0.0)
    norms = np.sqrt((u**2).sum(axis=0))
    peak = norms.max()
    if max_magnitude == 0.0 or peak == 0.0:
        u = np.zeros_like(u)
    else:
        u *= max_magnitude / peak
    return DeformationField(u.astype(np.float32))


def make_pair(spec: PhantomSpec, max_magnitude: float, smooth_sigma: float, seed: int) -> PairSample:
    """fixed = phantom; moving = warp(fixed, gt): the stored field is the
    exact transform taking the phantom onto its deformed counterpart."""
    fixed, fixed_seg = gen_phantom(spec, stable_seed(seed, "phantom"))
    gt = gen_smooth_field(spec.shape, max_magnitude, smooth_sigma, stable_seed(seed, "field"))
    moving = fields.warp_volume(fixed, gt, "trilinear")
    moving_seg = fields.warp_segmentation(fixed_seg, gt)
    return PairSample(fixed, moving, fixed_seg, moving_seg, gt, seed)


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to (re)generate a dataset from a seed."""

    families: tuple[str, ...]
    shape: tuple[int, int, int]
    labels: int = 3
    noise_sigma: float = 0.03
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    max_magnitude: float = 6.0
    smooth_sigma: float = 8.0
    n_train: int = 30
    n_val: int = 0
    n_test: int = 10

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        for fam in self.families:
            if fam not in FAMILIES:
                raise ValueError(f"unknown family {fam!r}")
        if not self.families:
            raise ValueError("at least one family required")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test < 1:
            raise ValueError("dataset must contain at least one pair")

    def phantom_spec(self, family: str) -> PhantomSpec:
        return PhantomSpec(self.shape, family, self.labels, self.noise_sigma, self.spacing_mm)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "families": list(self.families),
            "shape": list(self.shape),
            "labels": self.labels,
            "noise_sigma": self.noise_sigma,
            "spacing_mm": list(self.spacing_mm),
            "max_magnitude": self.max_magnitude,
            "smooth_sigma": self.smooth_sigma,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
        }


PAIR_FILES = ("fixed", "moving", "fixed_seg", "moving_seg", "gt_field")


def write_dataset(out_dir, spec: DatasetSpec, seed: int) -> dict:
    """Generate all pairs and a manifest; fully reproducible from (spec, seed)."""
    out_dir = Path(out_dir)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    splits = ["train"] * spec.n_train + ["val"] * spec.n_val + ["test"] * spec.n_test
    entries = []
    for i, split in enumerate(splits):
        family = spec.families[i % len(spec.families)]  # interleaved for hybrid sets
        pair_seed = stable_seed(seed, "pair", i)
        pair = make_pair(spec.phantom_spec(family), spec.max_magnitude, spec.smooth_sigma, pair_seed)
        pair_dir = out_dir / "pairs" / f"pair_{i:04d}"
        pair_dir.mkdir(exist_ok=True)
        fmv.write_volume(pair_dir / "fixed.fmv", pair.fixed)
        fmv.write_volume(pair_dir / "moving.fmv", pair.moving)
        fmv.write_segmentation(pair_dir / "fixed_seg.fmv", pair.fixed_seg)
        fmv.write_segmentation(pair_dir / "moving_seg.fmv", pair.moving_seg)
        fmv.write_field(pair_dir / "gt_field.fmv", pair.gt_field, spec.spacing_mm)
        entries.append(
            {
                "id": f"pair_{i:04d}",
                "family": family,
                "seed": pair_seed,
                "split": split,
                "dir": f"pairs/pair_{i:04d}",
            }
        )
    manifest = {"version": 1, "seed": seed, "spec": spec.to_dict(), "pairs": entries}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json under {data_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_pair(data_dir, entry: dict) -> PairSample:
    pair_dir = Path(data_dir) / entry["dir"]
    return PairSample(
        fixed=fmv.read_volume(pair_dir / "fixed.fmv"),
        moving=fmv.read_volume(pair_dir / "moving.fmv"),
        fixed_seg=fmv.read_segmentation(pair_dir / "fixed_seg.fmv"),
        moving_seg=fmv.read_segmentation(pair_dir / "moving_seg.fmv"),
        gt_field=fmv.read_field(pair_dir / "gt_field.fmv"),
        seed=entry["seed"],
    )


def split_entries(manifest: dict, split: str) -> list[dict]:
    entries = [e for e in manifest["pairs"] if e["split"] == split]
    if not entries:
        raise ValueError(f"manifest has no pairs in split {split!r}")
    return entries
