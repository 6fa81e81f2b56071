"""Training objective: local squared NCC, soft Dice, diffusion smoothness.

All three are torch-differentiable with respect to their volume/field
inputs; the combined objective is lambda0 * ncc + lambda1 * dice +
lambda2 * smooth.  Functions accept (H, W, D) / (C, H, W, D) tensors and
return 0-dim tensors.
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .types import Segmentation


@dataclass(frozen=True)
class NccConfig:
    window: int = 9
    eps: float = 1e-5

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class LossWeights:
    l0: float = 1.0
    l1: float = 0.0
    l2: float = 1.0

    def __post_init__(self):
        vals = (self.l0, self.l1, self.l2)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"loss weights must be finite and >= 0, got {vals}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))


def _window_sums(x: torch.Tensor, window: int) -> torch.Tensor:
    """Zero-padded sums over cubic windows, via separable 1D convolutions."""
    pad = window // 2
    ones = torch.ones(window, dtype=x.dtype, device=x.device)
    h = F.conv3d(x, ones.view(1, 1, window, 1, 1), padding=(pad, 0, 0))
    h = F.conv3d(h, ones.view(1, 1, 1, window, 1), padding=(0, pad, 0))
    return F.conv3d(h, ones.view(1, 1, 1, 1, window), padding=(0, 0, pad))


def ncc_loss(warped, fixed, cfg: NccConfig = NccConfig()) -> torch.Tensor:
    """Negative mean local squared cross-correlation; range [-1, 0].

    CC^2 = cov^2 / (var_a * var_b + eps) over zero-padded cubic windows;
    the eps floor sends flat windows to ~0 instead of dividing by zero.
    """
    a = _as_tensor(warped)
    b = _as_tensor(fixed)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    a5 = a[None, None]
    b5 = b[None, None]
    n = float(cfg.window**3)
    sa = _window_sums(a5, cfg.window)
    sb = _window_sums(b5, cfg.window)
    saa = _window_sums(a5 * a5, cfg.window)
    sbb = _window_sums(b5 * b5, cfg.window)
    sab = _window_sums(a5 * b5, cfg.window)
    cross = sab - sa * sb / n
    var_a = (saa - sa * sa / n).clamp(min=0.0)
    var_b = (sbb - sb * sb / n).clamp(min=0.0)
    cc2 = cross * cross / (var_a * var_b + cfg.eps)
    return -cc2.mean()


def dice_loss(warped_soft, fixed_soft, eps: float = 1e-5) -> torch.Tensor:
    """Soft Dice over per-label probability maps (L, H, W, D); range [0, 1]."""
    a = _as_tensor(warped_soft)
    b = _as_tensor(fixed_soft)
    if a.shape != b.shape:
        raise ValueError(f"shape/label mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    inter = (a * b).sum(dim=(1, 2, 3))
    sums = a.sum(dim=(1, 2, 3)) + b.sum(dim=(1, 2, 3))
    dice = (2.0 * inter + eps) / (sums + eps)
    return 1.0 - dice.mean()


def smoothness_loss(field) -> torch.Tensor:
    """Mean squared forward difference of u over channels, axes, and voxels."""
    u = _as_tensor(field)
    if u.ndim != 4 or u.shape[0] != 3 or min(u.shape[1:]) < 2:
        raise ValueError(f"need a (3, H, W, D) field with >= 2 voxels per axis, got {tuple(u.shape)}")
    total = u.new_zeros(())
    for axis in (1, 2, 3):
        total = total + torch.diff(u, dim=axis).square().mean()
    return total / 3.0


def one_hot_labels(seg: Segmentation) -> torch.Tensor:
    """Foreground one-hot maps (L, H, W, D) in label_set order; background excluded."""
    labels = torch.from_numpy(np.ascontiguousarray(seg.labels))
    return torch.stack([(labels == l).float() for l in seg.label_set], dim=0)


def total_loss(
    warped,
    fixed,
    warped_seg,
    fixed_seg,
    field,
    w: LossWeights = LossWeights(),
    cfg: NccConfig = NccConfig(),
):
    """Weighted sum; returns (total, breakdown of the unweighted terms).

    Segmentation maps may be None when l1 == 0; the Dice term is then
    absent from both the sum and gradient flow.
    """
    term_ncc = ncc_loss(warped, fixed, cfg)
    term_smooth = smoothness_loss(field)
    total = w.l0 * term_ncc + w.l2 * term_smooth
    breakdown = {"ncc": float(term_ncc.detach()), "dice": None, "smooth": float(term_smooth.detach())}
    if w.l1 > 0:
        if warped_seg is None or fixed_seg is None:
            raise ValueError("lambda1 > 0 requires warped and fixed segmentation maps")
        term_dice = dice_loss(warped_seg, fixed_seg)
        total = total + w.l1 * term_dice
        breakdown["dice"] = float(term_dice.detach())
    breakdown["total"] = float(total.detach())
    return total, breakdown
