"""Coarse-to-fine residual deformation pyramid.

Feature pairs are downsampled into a five-level pyramid; starting from the
coarsest level the head predicts a residual field from the (warped) moving
and fixed features, composing it onto the upsampled coarser estimate:
phi = phi_coarse o phi_residual.  Final convolutions are zero-initialized,
so a fresh head is exactly the identity transform.
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import gridops
from .types import DeformationField, FeatureVolume, STAGE_COMPRESSED


@dataclass(frozen=True)
class PyramidConfig:
    levels: int = 5
    min_size: int = 4
    scale: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.min_size < 2:
            raise ValueError(f"min_size must be >= 2, got {self.min_size}")
        if self.scale < 2:
            raise ValueError(f"scale must be >= 2, got {self.scale}")


def level_shapes(shape, cfg: PyramidConfig) -> list[tuple[int, int, int]]:
    """Per-level grid sizes, finest (the input itself) to coarsest."""
    out = []
    for i in range(cfg.levels):
        out.append(
            tuple(max(math.ceil(s / cfg.scale**i), min(cfg.min_size, s)) for s in shape)
        )
    return out


def build_pyramid(fm: torch.Tensor, ff: torch.Tensor, cfg: PyramidConfig):
    """Trilinear feature pyramid [(fm_0, ff_0), ...], level 0 bitwise the inputs."""
    if fm.shape != ff.shape:
        raise ValueError(f"feature shapes differ: {tuple(fm.shape)} vs {tuple(ff.shape)}")
    shapes = level_shapes(fm.shape[1:], cfg)
    pairs = [(fm, ff)]
    for shp in shapes[1:]:
        pairs.append(
            (gridops.resample_channels(fm, shp), gridops.resample_channels(ff, shp))
        )
    return pairs


class ResidualStage(nn.Module):
    """3-layer conv block 2n -> 32 -> 32 -> 3 predicting one level's residual field."""

    def __init__(self, n: int, hidden: int = 32, gen: torch.Generator | None = None):
        super().__init__()
        self.conv1 = nn.Conv3d(2 * n, hidden, 3, padding=1)
        self.conv2 = nn.Conv3d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv3d(hidden, 3, 3, padding=1)
        if gen is not None:
            for conv in (self.conv1, self.conv2):
                bound = 1.0 / math.sqrt(conv.in_channels * 27)
                with torch.no_grad():
                    conv.weight.uniform_(-bound, bound, generator=gen)
                    conv.bias.uniform_(-bound, bound, generator=gen)
        with torch.no_grad():
            self.conv3.weight.zero_()
            self.conv3.bias.zero_()

    def forward(self, fm_warped: torch.Tensor, ff: torch.Tensor) -> torch.Tensor:
        x = torch.cat([fm_warped, ff], dim=0)[None]
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return self.conv3(h)[0]


def predict_residual(stage: ResidualStage, fm_warped: torch.Tensor, ff: torch.Tensor) -> torch.Tensor:
    if fm_warped.shape != ff.shape:
        raise ValueError(f"feature shapes differ: {tuple(fm_warped.shape)} vs {tuple(ff.shape)}")
    return stage(fm_warped, ff)


class RegistrationHead(nn.Module):
    """One residual stage per pyramid level; stage i serves level i (0 = finest)."""

    def __init__(self, n: int, cfg: PyramidConfig = PyramidConfig(), hidden: int = 32, seed: int = 0):
        super().__init__()
        if n < 1:
            raise ValueError(f"feature channels must be >= 1, got {n}")
        self.n = n
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList(ResidualStage(n, hidden, gen) for _ in range(cfg.levels))

    def forward(self, fm: torch.Tensor, ff: torch.Tensor) -> torch.Tensor:
        if fm.shape[0] != self.n:
            raise ValueError(f"expected {self.n}-channel features, got {fm.shape[0]}")
        pairs = build_pyramid(fm, ff, self.cfg)
        phi = None
        for i in reversed(range(self.cfg.levels)):
            fm_i, ff_i = pairs[i]
            if phi is None:
                phi = predict_residual(self.stages[i], fm_i, ff_i)
            else:
                phi = gridops.resample_field(phi, fm_i.shape[1:])
                fm_warped = gridops.warp_channels(fm_i, phi)
                residual = predict_residual(self.stages[i], fm_warped, ff_i)
                phi = gridops.compose(phi, residual)
            if not torch.isfinite(phi).all():
                raise FloatingPointError(f"non-finite deformation field at pyramid level {i}")
        return phi


def init_head_params(n: int, levels: int = 5, seed: int = 0, min_size: int = 4) -> RegistrationHead:
    """Seeded head; hidden layers uniform fan-in, final layers zero (identity at init)."""
    return RegistrationHead(n, PyramidConfig(levels=levels, min_size=min_size), seed=seed)


def register(fm: FeatureVolume, ff: FeatureVolume, head: RegistrationHead) -> DeformationField:
    """Full-resolution field aligning the moving features onto the fixed ones.

    Accepts any compressed feature pair with the head's channel count,
    regardless of which encoder produced it.
    """
    if fm.stage != STAGE_COMPRESSED or ff.stage != STAGE_COMPRESSED:
        raise ValueError(f"register expects stage {STAGE_COMPRESSED!r} features")
    if fm.data.shape != ff.data.shape:
        raise ValueError(f"feature shapes differ: {fm.data.shape} vs {ff.data.shape}")
    with torch.no_grad():
        phi = head(torch.from_numpy(fm.data), torch.from_numpy(ff.data))
    return DeformationField(phi.numpy())
