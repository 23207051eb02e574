"""Value types, frozen-model handles and the analytic toy stack.

Images are ``(..., H, W, 3)`` tensors in ``[-1, 1]``; latent codes are
``(..., L, C)`` tensors.  All handles accept batched inputs.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgument

TOY_RESOLUTION = 32


def sample_noise(n, rng, batch=None, dtype=torch.float32):
    """Draw standard-normal noise of length ``n`` from a ``torch.Generator``."""
    if n < 1:
        raise InvalidArgument(f"noise length must be >= 1, got {n}")
    shape = (n,) if batch is None else (batch, n)
    return torch.randn(shape, generator=rng, dtype=dtype)


def check_image(x, resolution=None):
    if x.dim() < 3 or x.shape[-1] != 3:
        raise InvalidArgument(f"expected (..., H, W, 3) image, got {tuple(x.shape)}")
    if resolution is not None and tuple(x.shape[-3:-1]) != tuple(resolution):
        raise InvalidArgument(
            f"expected {resolution[0]}x{resolution[1]} image, got {tuple(x.shape[-3:-1])}")


def digest_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


class GeneratorHandle:
    """Frozen generator contract.

    Subclasses set ``latent_shape`` and ``resolution`` and implement
    ``generate`` (differentiable w.r.t. the code), ``sample_latent`` and
    ``parameter_arrays``.
    """

    name = "abstract"
    latent_shape = None
    resolution = None

    def generate(self, w):
        raise NotImplementedError

    def sample_latent(self, n, rng):
        raise NotImplementedError

    def parameter_arrays(self):
        raise NotImplementedError

    def digest(self):
        return digest_arrays(*self.parameter_arrays())

    def __call__(self, w):
        return self.generate(w)


class ClassifierHandle:
    """Frozen multi-label attribute classifier: image -> probabilities in [0,1]^m."""

    name = "abstract"
    num_attributes = None

    def classify(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.classify(x)


class EmbedderHandle:
    """Frozen feature extractor; ``role`` is ``"perceptual"`` or ``"identity"``."""

    name = "abstract"
    role = "perceptual"

    def embed(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.embed(x)


def _texture_table(rng, k):
    # wave vector (u, v) with v even in (0, 16): every sinusoid sums to zero
    # over each 16x16 quadrant and over every full-height strip, and distinct
    # vectors are orthogonal on the 32x32 grid.
    candidates = [(u, v) for v in range(2, 16, 2) for u in range(0, 16)]
    if k > len(candidates):
        raise InvalidArgument(f"at most {len(candidates)} content dims supported")
    picks = rng.choice(len(candidates), size=k, replace=False)
    table = []
    for i in picks:
        u, v = candidates[i]
        f = math.gcd(u, v)
        table.append((f, u // f, v // f, int(rng.integers(0, 8))))
    return np.array(table, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ToyStack:
    """Seeded analytic generator/classifier/identity triple.

    ``Q`` has orthonormal rows; the first ``m`` rows drive the attribute
    quadrants, the remaining ``k`` rows drive the content texture.
    """

    seed: int = 7
    m: int = 4
    k: int = 8
    L: int = 4
    C: int = 16
    amplitude: float = 0.2
    sharpness: float = 20.0

    def __post_init__(self):
        d = self.L * self.C
        if self.m + self.k > d:
            raise InvalidArgument("m + k must not exceed L*C")
        if self.m != 4 and TOY_RESOLUTION % self.m:
            raise InvalidArgument("m must be 4 or divide 32")
        rng = np.random.default_rng(self.seed)
        q, r = np.linalg.qr(rng.standard_normal((d, self.m + self.k)))
        q = q * np.sign(np.diag(r))
        object.__setattr__(self, "Q", q.T.copy())
        object.__setattr__(self, "textures", _texture_table(rng, self.k))
        object.__setattr__(self, "_basis", self._make_basis())
        object.__setattr__(self, "_masks", self._make_masks())
        object.__setattr__(self, "_cache", {})

    @property
    def latent_shape(self):
        return (self.L, self.C)

    @property
    def resolution(self):
        return (TOY_RESOLUTION, TOY_RESOLUTION)

    @property
    def Q_attr(self):
        return self.Q[: self.m]

    @property
    def Q_cont(self):
        return self.Q[self.m:]

    def _make_basis(self):
        n = TOY_RESOLUTION
        y, x = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        basis = np.empty((self.k, n, n))
        for j, (f, p, q, phi) in enumerate(self.textures):
            basis[j] = np.sin(2 * np.pi * f * (x * p + y * q) / n + 2 * np.pi * phi / 8)
        return basis

    def _make_masks(self):
        n = TOY_RESOLUTION
        masks = np.zeros((self.m, n, n))
        if self.m == 4:
            h = n // 2
            for q, (r0, c0) in enumerate([(0, 0), (0, h), (h, 0), (h, h)]):
                masks[q, r0:r0 + h, c0:c0 + h] = 1.0
        else:
            s = n // self.m
            for q in range(self.m):
                masks[q, :, q * s:(q + 1) * s] = 1.0
        return masks

    def _tensors(self, dtype, device):
        key = (dtype, device)
        if key not in self._cache:
            self._cache[key] = tuple(
                torch.as_tensor(a, dtype=dtype, device=device)
                for a in (self.Q, self._basis, self._masks))
        return self._cache[key]

    def projections(self, w):
        """Return ``(Q_attr @ w_flat, Q_cont @ w_flat)`` for a batch of codes."""
        Q, _, _ = self._tensors(w.dtype, w.device)
        flat = w.reshape(*w.shape[:-2], -1)
        proj = flat @ Q.T
        return proj[..., : self.m], proj[..., self.m:]

    def digest(self):
        return digest_arrays(self.Q, self.textures,
                             np.array([self.amplitude, self.sharpness]))


def toy_generate(w, stack):
    if tuple(w.shape[-2:]) != stack.latent_shape:
        raise InvalidArgument(
            f"latent shape {tuple(w.shape[-2:])} != {stack.latent_shape}")
    _, basis, masks = stack._tensors(w.dtype, w.device)
    pa, pc = stack.projections(w)
    a = torch.sigmoid(pa)
    c = torch.tanh(pc)
    base = torch.einsum("...q,qyx->...yx", 2 * a - 1, masks)
    texture = stack.amplitude * torch.einsum("...j,jyx->...yx", c, basis)
    img = torch.clamp(base + texture, -1.0, 1.0)
    return img.unsqueeze(-1).expand(*img.shape, 3)


def quadrant_means(x, stack):
    """Per-attribute region mean over all channels, shape ``(..., m)``."""
    _, _, masks = stack._tensors(x.dtype, x.device)
    per_pixel = x.mean(dim=-1)
    return torch.einsum("...yx,qyx->...q", per_pixel, masks) / masks[0].sum()


def toy_classify(x, stack):
    check_image(x, stack.resolution)
    return torch.sigmoid(stack.sharpness * quadrant_means(x, stack))


def toy_identity_embed(x, stack):
    check_image(x, stack.resolution)
    _, basis, _ = stack._tensors(x.dtype, x.device)
    per_pixel = x.mean(dim=-1)
    inner = torch.einsum("...yx,jyx->...j", per_pixel, basis)
    return inner / (basis ** 2).sum(dim=(-2, -1)) / stack.amplitude


class ToyGenerator(GeneratorHandle):
    name = "toy"

    def __init__(self, stack):
        self.stack = stack
        self.latent_shape = stack.latent_shape
        self.resolution = stack.resolution

    def generate(self, w):
        return toy_generate(w, self.stack)

    def sample_latent(self, n, rng):
        return torch.randn((n, *self.latent_shape), generator=rng)

    def parameter_arrays(self):
        return [self.stack.Q, self.stack.textures,
                np.array([self.stack.amplitude, self.stack.sharpness])]


class ToyClassifier(ClassifierHandle):
    name = "toy"

    def __init__(self, stack):
        self.stack = stack
        self.num_attributes = stack.m
        self.resolution = stack.resolution

    def classify(self, x):
        return toy_classify(x, self.stack)


class ToyIdentityEmbedder(EmbedderHandle):
    name = "toy_identity"
    role = "identity"

    def __init__(self, stack):
        self.stack = stack

    def embed(self, x):
        return toy_identity_embed(x, self.stack)


class PooledPerceptualEmbedder(EmbedderHandle):
    """Linear perceptual features: ``pool x pool`` average pooling, flattened.

    ``matrix(resolution)`` returns the equivalent dense linear map, so the
    features are exactly ``A @ vec(x)``.
    """

    name = "toy_perceptual"
    role = "perceptual"

    def __init__(self, pool=4):
        self.pool = pool

    def embed(self, x):
        check_image(x)
        *lead, h, w, ch = x.shape
        p = self.pool
        pooled = x.reshape(*lead, h // p, p, w // p, p, ch).mean(dim=(-4, -2))
        return pooled.reshape(*lead, -1)

    def matrix(self, resolution):
        h, w = resolution
        p = self.pool
        rows = np.kron(np.eye(h // p), np.ones((1, p)) / p)
        cols = np.kron(np.eye(w // p), np.ones((1, p)) / p)
        # vec order is (y, x, channel) row-major
        return np.kron(np.kron(rows, cols), np.eye(3))


GENERATORS = {}
CLASSIFIERS = {}
EMBEDDERS = {}


def register(table, name):
    def deco(factory):
        table[name] = factory
        return factory
    return deco


@register(GENERATORS, "toy")
def _toy_generator(spec):
    stack = ToyStack(seed=spec.get("seed", 7), m=spec.get("m", 4), k=spec.get("k", 8),
                     L=spec.get("L", 4), C=spec.get("C", 16),
                     amplitude=spec.get("amplitude", 0.2),
                     sharpness=spec.get("sharpness", 20.0))
    return ToyGenerator(stack)


@register(CLASSIFIERS, "toy")
def _toy_classifier(spec, generator):
    if not isinstance(generator, ToyGenerator):
        raise InvalidArgument("toy classifier requires the toy generator")
    return ToyClassifier(generator.stack)


@register(EMBEDDERS, "toy_identity")
def _toy_identity(spec, generator):
    if not isinstance(generator, ToyGenerator):
        raise InvalidArgument("toy identity embedder requires the toy generator")
    return ToyIdentityEmbedder(generator.stack)


@register(EMBEDDERS, "toy_perceptual")
def _toy_perceptual(spec, generator):
    return PooledPerceptualEmbedder(pool=spec.get("pool", 4))


@dataclass
class Handles:
    generator: GeneratorHandle
    classifier: ClassifierHandle
    perceptual: EmbedderHandle
    identity: EmbedderHandle


def _lookup(table, spec, what):
    kind = spec.get("kind")
    if kind not in table:
        raise InvalidArgument(f"unknown {what} kind {kind!r}; known: {sorted(table)}")
    return table[kind]


def build_handles(config):
    """Instantiate generator/classifier/embedders from an experiment config dict."""
    gen_spec = config.get("generator", {"kind": "toy"})
    gen = _lookup(GENERATORS, gen_spec, "generator")(gen_spec)
    cls_spec = config.get("classifier", {"kind": "toy"})
    clf = _lookup(CLASSIFIERS, cls_spec, "classifier")(cls_spec, gen)
    emb = config.get("embedders", {})
    p_spec = emb.get("perceptual", {"kind": "toy_gradient"})
    i_spec = emb.get("identity", {"kind": "toy_identity"})
    perceptual = _lookup(EMBEDDERS, p_spec, "embedder")(p_spec, gen)
    identity = _lookup(EMBEDDERS, i_spec, "embedder")(i_spec, gen)
    return Handles(gen, clf, perceptual, identity)


class GradientPerceptualEmbedder(EmbedderHandle):
    """Linear high-pass features: channel-mean horizontal and vertical differences."""

    name = "toy_gradient"
    role = "perceptual"

    def embed(self, x):
        check_image(x)
        g = x.mean(dim=-1)
        dx = g[..., :, 1:] - g[..., :, :-1]
        dy = g[..., 1:, :] - g[..., :-1, :]
        return torch.cat([dx.flatten(-2), dy.flatten(-2)], dim=-1)


@register(EMBEDDERS, "toy_gradient")
def _toy_gradient(spec, generator):
    return GradientPerceptualEmbedder()
