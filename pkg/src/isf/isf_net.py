"""Implicit style function: w* = f2(AdaLN(w, gamma, beta)), (gamma, beta) from f1(d ⊕ z)."""

import math
from dataclasses import dataclass, asdict

import torch
from torch import nn
import torch.nn.functional as F

from .errors import InvalidArgument

NORM_MODES = ("layer", "row", "instance")
LEAK = 0.2


def normalize(w, eps=1e-8, mode="layer"):
    """Standardize a batch of ``(..., L, C)`` codes.

    ``layer`` uses one mean/std pair over the whole code, ``row`` one pair
    per row (per style layer), ``instance`` one pair per channel column.
    Standard deviations are population (biased) estimates.
    """
    if mode == "layer":
        dims = (-2, -1)
    elif mode == "row":
        dims = (-1,)
    elif mode == "instance":
        dims = (-2,)
    else:
        raise InvalidArgument(f"unknown norm mode {mode!r}")
    mu = w.mean(dim=dims, keepdim=True)
    centered = w - mu
    sigma = centered.pow(2).mean(dim=dims, keepdim=True).sqrt()
    return centered / (sigma + eps)


def adaln(w, gamma, beta, eps=1e-8, mode="layer"):
    L, C = w.shape[-2:]
    if gamma.shape[-1] != L * C or beta.shape[-1] != L * C:
        raise InvalidArgument(
            f"gamma/beta length must be {L * C}, got {gamma.shape[-1]}/{beta.shape[-1]}")
    if eps < 0:
        raise InvalidArgument("eps must be non-negative")
    g = gamma.reshape(*gamma.shape[:-1], L, C)
    b = beta.reshape(*beta.shape[:-1], L, C)
    return g * normalize(w, eps, mode) + b


@dataclass(frozen=True)
class ISFDims:
    L: int = 4
    C: int = 16
    m: int = 4
    n: int = 32
    hidden: int = 256
    f1_depth: int = 2
    f2_depth: int = 2
    norm: str = "layer"
    eps: float = 1e-8

    @property
    def code_size(self):
        return self.L * self.C

    def as_dict(self):
        return asdict(self)


def _mlp(sizes, trailing_activation):
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if trailing_activation or i < len(sizes) - 2:
            layers.append(nn.LeakyReLU(LEAK))
    return nn.Sequential(*layers)


class ISF(nn.Module):
    """Conditional latent-code editor ``M(w, z, d)``.

    ``f1`` is a stack of ``f1_depth`` hidden layers (each followed by
    leaky-ReLU); its output ``h`` feeds the linear ``affine`` map producing
    ``gamma - 1`` and ``beta``.  ``f2`` has ``f2_depth`` hidden layers and a
    linear output layer whose result is added to the AdaLN output.
    """

    def __init__(self, dims):
        super().__init__()
        if dims.norm not in NORM_MODES:
            raise InvalidArgument(f"unknown norm mode {dims.norm!r}")
        self.dims = dims
        h, d = dims.hidden, dims.code_size
        self.f1 = _mlp([dims.m + dims.n] + [h] * dims.f1_depth, trailing_activation=True)
        self.affine = nn.Linear(h, 2 * d)
        self.f2 = _mlp([d] + [h] * dims.f2_depth + [d], trailing_activation=False)

    def style(self, h):
        return style_affine(h, self)

    def forward(self, w, z, d):
        dims = self.dims
        if tuple(w.shape[-2:]) != (dims.L, dims.C):
            raise InvalidArgument(f"latent shape {tuple(w.shape[-2:])} != {(dims.L, dims.C)}")
        if z.shape[-1] != dims.n or d.shape[-1] != dims.m:
            raise InvalidArgument(
                f"expected z length {dims.n} and d length {dims.m}, "
                f"got {z.shape[-1]} and {d.shape[-1]}")
        h = self.f1(torch.cat([d, z], dim=-1))
        gamma, beta = self.style(h)
        normed = adaln(w, gamma, beta, dims.eps, dims.norm).flatten(-2)
        out = normed + self.f2(normed)
        return out.reshape(w.shape)


def style_affine(h, params):
    layer = params.affine
    if h.shape[-1] != layer.in_features:
        raise InvalidArgument(f"h width {h.shape[-1]} != {layer.in_features}")
    raw = layer(h)
    size = layer.out_features // 2
    return 1.0 + raw[..., :size], raw[..., size:]


def isf_forward(w, z, d, params):
    return params(w, z, d)


def init_params(dims, rng):
    """Build an ``ISF`` with He-uniform hidden weights drawn from ``rng``.

    Biases, the affine map and the final ``f2`` layer start at zero, so the
    fresh network maps ``w`` to its normalized code.
    """
    if isinstance(rng, int):
        rng = torch.Generator().manual_seed(rng)
    net = ISF(dims)
    linears = [mod for mod in net.modules() if isinstance(mod, nn.Linear)]
    with torch.no_grad():
        for layer in linears:
            bound = math.sqrt(6.0 / layer.in_features)
            layer.weight.copy_(torch.empty_like(layer.weight).uniform_(-bound, bound, generator=rng))
            layer.bias.zero_()
        for layer in (net.affine, net.f2[-1]):
            layer.weight.zero_()
            layer.bias.zero_()
    return net


def count_params(module):
    return sum(p.numel() for p in module.parameters())
