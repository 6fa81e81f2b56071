"""Slice-wise feature encoding: pad, frozen 2D encode, channel reduction,
3D reassembly, and a trainable volumetric compression block.

A volume (H, W, D) is cut into D axial slices, each zero-padded to K x K
(content centered), pushed through a frozen stride-16 2D encoder to
(c, K/16, K/16), reduced to c' channels, stacked to 3D, trilinearly
upsampled in-plane back to K, cropped to (H, W), and finally compressed
to n channels by a 3-layer 3D convolutional block that restores local
volumetric context.
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import gridops
from .types import FeatureVolume, STAGE_COMPRESSED, STAGE_RAW, Volume


@dataclass(frozen=True)
class EncoderConfig:
    K: int
    c: int
    c_prime: int
    n: int
    stride: int = 16

    def __post_init__(self):
        if self.K <= 0 or self.K % self.stride != 0:
            raise ValueError(f"K must be a positive multiple of stride {self.stride}, got {self.K}")
        if not (0 < self.n <= self.c_prime <= self.c):
            raise ValueError(f"need 0 < n <= c' <= c, got n={self.n}, c'={self.c_prime}, c={self.c}")


# "dino-b" / "sam-b" mirror the published backbone channel counts; the toy
# profiles are desk-scale stand-ins with the same stride-16 geometry.
PROFILES = {
    "toy-32": EncoderConfig(K=64, c=32, c_prime=16, n=8),
    "toy-48": EncoderConfig(K=64, c=48, c_prime=16, n=8),
    "dino-b": EncoderConfig(K=512, c=768, c_prime=256, n=32),
    "sam-b": EncoderConfig(K=512, c=256, c_prime=256, n=32),
}


def pad_slice(s: np.ndarray, K: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad a (H, W) slice to (K, K) with the content centered.

    Returns the padded slice and the (row, col) offsets needed to crop it
    back out exactly.
    """
    h, w = s.shape
    if h > K or w > K:
        raise ValueError(f"slice {s.shape} does not fit in {K}x{K}")
    oh, ow = (K - h) // 2, (K - w) // 2
    out = np.zeros((K, K), dtype=np.float32)
    out[oh : oh + h, ow : ow + w] = s
    return out, (oh, ow)


def _uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)


# 3x3 basis filters the frozen encoder draws from: smoothing keeps content
# flowing through all four octaves, derivatives encode local structure
_SMOOTH = torch.tensor([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=torch.float32) / 16.0
_DX = torch.tensor([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=torch.float32) / 4.0
_DY = _DX.T.contiguous()
_CENTER = torch.zeros(3, 3)
_CENTER[1, 1] = 1.0
_FILTER_BANK = torch.stack([_SMOOTH, _DX, _DY, _CENTER])
_BANK_GAINS = torch.tensor([1.0, 0.5, 0.5, 0.5])


class ToySliceEncoder(nn.Module):
    """Frozen, seeded stand-in for a foundation 2D encoder.

    Four stride-2 3x3 convolutions (total stride 16) ending at c channels;
    each kernel is a seeded random mixture of smoothing/derivative basis
    filters, with a modulus nonlinearity between stages (a scattering-style
    cascade), so the stack behaves like a multi-scale local-structure
    descriptor whose cell amplitudes are sensitive to sub-cell content
    position rather than a noise projection.  Parameters are fixed at
    construction and registered as buffers: the encoder is frozen by
    construction and bitwise deterministic per seed.
    """

    def __init__(self, c: int, seed: int = 0, stride: int = 16):
        super().__init__()
        if stride != 16:
            raise ValueError("toy encoder implements stride 16 only")
        self.c = c
        self.seed = seed
        widths = [1, max(4, c // 8), max(8, c // 4), max(16, c // 2), c]
        gen = torch.Generator().manual_seed(seed)
        for i in range(4):
            w_out, w_in = widths[i + 1], widths[i]
            coefs = torch.randn(w_out, w_in, 4, generator=gen) * _BANK_GAINS
            w = torch.einsum("oif,fxy->oixy", coefs, _FILTER_BANK) / math.sqrt(w_in)
            b = torch.empty(w_out)
            _uniform_(b, w_in * 9, gen)
            self.register_buffer(f"w{i}", w.contiguous())
            self.register_buffer(f"b{i}", b)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x (B, 1, K, K) -> (B, c, K/16, K/16)
        if x.ndim != 4 or x.shape[2] != x.shape[3] or x.shape[2] % 16 != 0:
            raise ValueError(f"expected square (B, 1, K, K) input with K a multiple of 16, got {tuple(x.shape)}")
        h = x
        for i in range(4):
            h = F.conv2d(h, getattr(self, f"w{i}"), getattr(self, f"b{i}"), stride=2, padding=1)
            if i < 3:
                h = h.abs()
        return h

    def param_hash(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for _, buf in sorted(self.named_buffers()):
            digest.update(buf.detach().numpy().tobytes())
        return digest.hexdigest()


def toy_encode_slice(s: np.ndarray, seed: int, c: int = 32) -> np.ndarray:
    """Encode one K x K slice with a fresh seeded toy encoder."""
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square 2D slice, got shape {s.shape}")
    enc = ToySliceEncoder(c, seed=seed)
    with torch.no_grad():
        out = enc(torch.from_numpy(np.ascontiguousarray(s, dtype=np.float32))[None, None])
    return out[0].numpy()


class ConvBlock3D(nn.Module):
    """Trainable 3-layer 3D block c' -> 64 -> 64 -> n (kernel 3, same padding)."""

    def __init__(self, c_in: int, c_out: int, hidden: int = 64, seed: int = 0):
        super().__init__()
        self.conv1 = nn.Conv3d(c_in, hidden, 3, padding=1)
        self.conv2 = nn.Conv3d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv3d(hidden, c_out, 3, padding=1)
        gen = torch.Generator().manual_seed(seed)
        for conv in (self.conv1, self.conv2, self.conv3):
            fan_in = conv.in_channels * 27
            _uniform_(conv.weight, fan_in, gen)
            _uniform_(conv.bias, fan_in, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return self.conv3(h)


def normalize_intensity(data: np.ndarray) -> np.ndarray:
    """Per-volume min-max normalization to [0, 1] (frozen encoders need a fixed range)."""
    lo = float(data.min())
    hi = float(data.max())
    if hi <= lo:
        return np.zeros_like(data, dtype=np.float32)
    return ((data - lo) / (hi - lo)).astype(np.float32)


def encode_slices_raw(vol01: torch.Tensor, enc: ToySliceEncoder, K: int):
    """Pad + encode all D axial slices; returns ((c, K/16, K/16, D), offsets)."""
    h, w, d = vol01.shape
    if h > K or w > K:
        raise ValueError(f"slices {h}x{w} do not fit in {K}x{K}")
    oh, ow = (K - h) // 2, (K - w) // 2
    slices = vol01.permute(2, 0, 1)[:, None]  # (D, 1, H, W)
    padded = F.pad(slices, (ow, K - w - ow, oh, K - h - oh))
    feats = enc(padded)  # (D, c, K/16, K/16)
    return feats.permute(1, 2, 3, 0).contiguous(), (oh, ow)


def assemble_features(reduced: torch.Tensor, offsets: tuple[int, int], hw: tuple[int, int], K: int) -> torch.Tensor:
    """Upsample (c', k, k, D) in-plane to K x K and crop the pad offsets to (H, W)."""
    d = reduced.shape[3]
    up = gridops.resample_channels(reduced, (K, K, d))
    oh, ow = offsets
    h, w = hw
    return up[:, oh : oh + h, ow : ow + w, :]


def raw_slice_features(data: np.ndarray, enc: ToySliceEncoder, K: int) -> torch.Tensor:
    """Normalize + encode a raw (H, W, D) array to (c, K/16, K/16, D), no grad."""
    with torch.no_grad():
        raw, _ = encode_slices_raw(torch.from_numpy(normalize_intensity(data)), enc, K)
    return raw


def encode_assembled(data: np.ndarray, enc: ToySliceEncoder, reducer, cfg: EncoderConfig) -> torch.Tensor:
    """Everything up to the 3D block (frozen path, no grad): (c', H, W, D)."""
    with torch.no_grad():
        vol01 = torch.from_numpy(normalize_intensity(data))
        raw, offsets = encode_slices_raw(vol01, enc, cfg.K)
        reduced = reducer(raw)
        if reduced.shape[0] != cfg.c_prime:
            raise ValueError(f"reducer produced {reduced.shape[0]} channels, expected c'={cfg.c_prime}")
        return assemble_features(reduced, offsets, data.shape[:2], cfg.K)


def encode_volume_t(
    data: np.ndarray,
    enc: ToySliceEncoder,
    reducer,
    block: ConvBlock3D,
    cfg: EncoderConfig,
) -> torch.Tensor:
    """Torch-side pipeline; grad flows through the 3D block only."""
    assembled = encode_assembled(data, enc, reducer, cfg)
    return block(assembled[None])[0]


def encode_volume(v: Volume, enc: ToySliceEncoder, reducer, block: ConvBlock3D, cfg: EncoderConfig) -> FeatureVolume:
    """Full encoding of a volume to its n-channel feature map."""
    with torch.no_grad():
        out = encode_volume_t(v.data, enc, reducer, block, cfg)
    return FeatureVolume(out.numpy(), STAGE_COMPRESSED)


def encode_volume_raw(v: Volume, enc: ToySliceEncoder, cfg: EncoderConfig) -> FeatureVolume:
    """Raw c-channel slice features on the (K/16, K/16, D) grid, pre reduction."""
    with torch.no_grad():
        vol01 = torch.from_numpy(normalize_intensity(v.data))
        raw, _ = encode_slices_raw(vol01, enc, cfg.K)
    return FeatureVolume(raw.numpy(), STAGE_RAW)
