"""Differentiable torch twins of the field algebra in fields.py.

Same conventions: clamp-to-border sampling, align-corners resampling,
compose(outer, inner) = phi_outer o phi_inner, displacement channels
rescaled by new_dim / old_dim on resampling.  Tensors are channels-first
(C, H, W, D) with no batch dimension; dtype follows the inputs.
"""
import torch


def base_grid(shape, dtype=torch.float32, device=None) -> torch.Tensor:
    """Voxel-index grid as a (3, H, W, D) tensor."""
    axes = [torch.arange(s, dtype=dtype, device=device) for s in shape]
    return torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=0)


def sample_channels(data: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Trilinear sampling of (C, H, W, D) data at (3, ...) coordinates.

    Differentiable with respect to both data and coords.
    """
    h, w, d = data.shape[1:]
    out_shape = coords.shape[1:]
    x = coords[0].reshape(-1).clamp(0.0, h - 1.0)
    y = coords[1].reshape(-1).clamp(0.0, w - 1.0)
    z = coords[2].reshape(-1).clamp(0.0, d - 1.0)
    x0 = x.floor()
    y0 = y.floor()
    z0 = z.floor()
    fx = x - x0
    fy = y - y0
    fz = z - z0
    x0 = x0.long()
    y0 = y0.long()
    z0 = z0.long()
    x1 = (x0 + 1).clamp(max=h - 1)
    y1 = (y0 + 1).clamp(max=w - 1)
    z1 = (z0 + 1).clamp(max=d - 1)

    flat = data.reshape(data.shape[0], -1)

    def corner(ix, iy, iz):
        return flat[:, (ix * w + iy) * d + iz]

    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    out = (
        corner(x0, y0, z0) * (gx * gy * gz)
        + corner(x1, y0, z0) * (fx * gy * gz)
        + corner(x0, y1, z0) * (gx * fy * gz)
        + corner(x0, y0, z1) * (gx * gy * fz)
        + corner(x1, y1, z0) * (fx * fy * gz)
        + corner(x1, y0, z1) * (fx * gy * fz)
        + corner(x0, y1, z1) * (gx * fy * fz)
        + corner(x1, y1, z1) * (fx * fy * fz)
    )
    return out.reshape((data.shape[0],) + out_shape)


def warp_channels(data: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """out(x) = data(x + u(x)), every channel warped by the same field."""
    if data.shape[1:] != field.shape[1:]:
        raise ValueError(f"grid mismatch: data {tuple(data.shape[1:])}, field {tuple(field.shape[1:])}")
    coords = base_grid(field.shape[1:], dtype=field.dtype, device=field.device) + field
    return sample_channels(data, coords)


def compose(outer: torch.Tensor, inner: torch.Tensor) -> torch.Tensor:
    """u(x) = u_inner(x) + u_outer(x + u_inner(x))."""
    if outer.shape != inner.shape:
        raise ValueError(f"field shapes differ: {tuple(outer.shape)} vs {tuple(inner.shape)}")
    coords = base_grid(inner.shape[1:], dtype=inner.dtype, device=inner.device) + inner
    return inner + sample_channels(outer, coords)


def resample_coords(old_shape, new_shape, dtype, device=None) -> torch.Tensor:
    axes = []
    for n, o in zip(new_shape, old_shape):
        if n == 1:
            axes.append(torch.zeros(1, dtype=dtype, device=device))
        else:
            axes.append(torch.arange(n, dtype=dtype, device=device) * ((o - 1) / (n - 1)))
    return torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=0)


def resample_channels(data: torch.Tensor, new_shape) -> torch.Tensor:
    """Trilinear per-channel resampling (feature pyramids: no magnitude scaling)."""
    coords = resample_coords(data.shape[1:], new_shape, dtype=data.dtype, device=data.device)
    return sample_channels(data, coords)


def resample_field(field: torch.Tensor, new_shape) -> torch.Tensor:
    """Trilinear field resampling with per-channel displacement rescaling."""
    out = resample_channels(field, new_shape)
    scale = torch.tensor(
        [n / o for n, o in zip(new_shape, field.shape[1:])],
        dtype=field.dtype,
        device=field.device,
    )
    return out * scale.view(3, 1, 1, 1)
