"""Edit, multi-modal sampling and interpolation helpers over a trained mapper."""

import torch

from .errors import InvalidArgument
from .metrics import InterpolationPath


def manipulate(w, d_target, params, z=None, rng=None):
    """Return ``(w_star, z)``; a fresh ``z`` is drawn when none is supplied."""
    batched = w.dim() == 3
    if z is None:
        shape = (w.shape[0], params.dims.n) if batched else (params.dims.n,)
        z = torch.randn(shape, generator=rng, dtype=w.dtype)
    d_target = torch.as_tensor(d_target, dtype=w.dtype)
    with torch.no_grad():
        return params(w, z, d_target), z


def sample_modes(w, d_target, count, params, rng=None):
    """``count`` edits of a single code with independent noise; returns ``(codes, zs)``."""
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    if w.dim() != 2:
        raise InvalidArgument("sample_modes edits one (L, C) code")
    zs = torch.randn((count, params.dims.n), generator=rng, dtype=w.dtype)
    d = torch.as_tensor(d_target, dtype=w.dtype).expand(count, -1)
    codes, _ = manipulate(w.expand(count, *w.shape), d, params, z=zs)
    return codes, zs


def build_path(w_src, w_dst, T, attribute=None):
    if T < 2:
        raise InvalidArgument("T must be >= 2")
    if w_src.shape != w_dst.shape:
        raise InvalidArgument("endpoint shapes differ")
    # float64 so consecutive increments agree far below float32 spacing
    a, b = w_src.to(torch.float64), w_dst.to(torch.float64)
    t = torch.arange(T + 1, dtype=torch.float64).reshape(-1, *([1] * a.dim())) / T
    codes = a + t * (b - a)
    codes[0] = a
    codes[-1] = b
    return InterpolationPath(codes, w_src, w_dst, attribute)


def flip_targets(d0, attribute):
    """Binarize ``d0`` and flip one attribute (an int or one index per row)."""
    d = (torch.as_tensor(d0) > 0.5).to(torch.float32)
    idx = torch.as_tensor(attribute).expand(d.shape[:-1]) if d.dim() > 1 else torch.as_tensor(attribute)
    if d.dim() == 1:
        d[idx] = 1 - d[idx]
    else:
        rows = torch.arange(d.shape[0])
        d[rows, idx] = 1 - d[rows, idx]
    return d
