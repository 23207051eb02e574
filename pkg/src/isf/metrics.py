"""Evaluation metrics: FRS, PPL, PIR, diversity, Fréchet distance, attribute accuracy."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidArgument, UndefinedSimilarity
from .objectives import perceptual_distance, unit_features


@dataclass
class InterpolationPath:
    codes: torch.Tensor          # (T + 1, L, C)
    source: torch.Tensor
    target: torch.Tensor
    attribute: int = None

    def __post_init__(self):
        if self.codes.dim() != 3 or len(self.codes) < 3:
            raise InvalidArgument("an interpolation path needs T >= 2, i.e. at least 3 codes")

    @property
    def T(self):
        return len(self.codes) - 1


@dataclass
class MetricsReport:
    values: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            raise InvalidArgument(f"non-finite metrics: {bad}")

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self):
        return {"metrics": self.values, "metadata": self.metadata}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def frs(x1, x2, identity):
    """Cosine similarity of identity features; batched inputs give one value per pair."""
    e1, e2 = identity(x1), identity(x2)
    n1, n2 = e1.norm(dim=-1), e2.norm(dim=-1)
    if (n1 == 0).any() or (n2 == 0).any():
        raise UndefinedSimilarity("identity embedding has zero norm")
    cos = (e1 * e2).sum(dim=-1) / (n1 * n2)
    return cos.clamp(-1.0, 1.0)


def lerp(a, b, t):
    t = t.reshape(-1, *([1] * (a.dim() - 1)))
    return a + t * (b - a)


def ppl(endpoint_pairs, generator, embedder, epsilon=1e-4, rng=None):
    """Mean of ``d(G(lerp(s, s*, t)), G(lerp(s, s*, t + eps))) / eps**2``.

    ``endpoint_pairs`` is ``(s, s_star)`` with leading batch dimension;
    ``d`` is the squared Euclidean distance between embedder features.
    One ``t ~ U(0, 1)`` is drawn per pair from ``rng``.
    """
    if epsilon <= 0:
        raise InvalidArgument("epsilon must be positive")
    s, s_star = endpoint_pairs
    if len(s) == 0:
        raise InvalidArgument("no endpoint pairs")
    t = torch.rand(len(s), generator=rng, dtype=s.dtype)
    f0 = embedder(generator(lerp(s, s_star, t)))
    f1 = embedder(generator(lerp(s, s_star, t + epsilon)))
    d = (f1 - f0).reshape(len(s), -1).pow(2).sum(dim=-1)
    return (d / epsilon ** 2).mean().item()


def pir_from_distances(increments, endpoint_distance, eps_stab=1e-6):
    inc = torch.as_tensor(increments, dtype=torch.float64)
    if inc.numel() < 2:
        raise InvalidArgument("PIR needs T >= 2 increments")
    if eps_stab < 0:
        raise InvalidArgument("eps_stab must be >= 0")
    spread = (inc.max() - inc.min()).item()
    if spread == 0:
        return 0.0
    return spread / (float(endpoint_distance) + eps_stab)


def pir(path, generator, perceptual, eps_stab=1e-6, distance=perceptual_distance):
    """Perceptual interpolation range of one path.

    ``(max_t phi_t - min_t phi_t) / (phi(G(s_0), G(s_T)) + eps_stab)`` with
    ``phi_t`` the perceptual distance between consecutive images.
    """
    if path.T < 2:
        raise InvalidArgument("T must be >= 2")
    imgs = generator(path.codes)
    inc = distance(imgs[:-1], imgs[1:], perceptual)
    ends = distance(imgs[:1], imgs[-1:], perceptual)[0]
    return pir_from_distances(inc.detach(), ends.item(), eps_stab)


def mean_pairwise_distance(images, perceptual):
    """Average perceptual distance over all unordered pairs along axis -4.

    ``images`` is ``(..., S, H, W, 3)``; returns a tensor over the leading dims.
    """
    u = unit_features(images, perceptual)
    S = u.shape[-2]
    d = (u.unsqueeze(-2) - u.unsqueeze(-3)).pow(2).sum(dim=-1)
    iu = torch.triu_indices(S, S, offset=1)
    return d[..., iu[0], iu[1]].mean(dim=-1)


def diversity_score(inputs, generator, mapper, perceptual, n_inputs=100, n_samples=10,
                    rng=None):
    """Mean pairwise perceptual distance among ``n_samples`` edits per input.

    ``inputs`` is ``(codes, targets)``; the first ``n_inputs`` rows are used.
    """
    if n_inputs < 1 or n_samples < 2:
        raise InvalidArgument("need n_inputs >= 1 and n_samples >= 2")
    codes, targets = inputs
    if len(codes) < n_inputs or len(targets) < n_inputs:
        raise InvalidArgument(f"only {min(len(codes), len(targets))} inputs for n_inputs={n_inputs}")
    codes, targets = codes[:n_inputs], targets[:n_inputs]
    n = mapper.dims.n
    z = torch.randn((n_inputs, n_samples, n), generator=rng, dtype=codes.dtype)
    w = codes.unsqueeze(1).expand(-1, n_samples, *codes.shape[1:])
    d = targets.unsqueeze(1).expand(-1, n_samples, targets.shape[-1])
    with torch.no_grad():
        imgs = generator(mapper(w, z, d))
        return mean_pairwise_distance(imgs, perceptual).mean().item()


def frechet_distance(features_a, features_b):
    """Fréchet distance between Gaussian fits of two feature sets.

    Covariances use the unbiased estimator; the trace of ``(Sa Sb)^(1/2)`` is
    taken from the eigenvalues of ``Sa^(1/2) Sb Sa^(1/2)`` with negative
    eigenvalues clamped to zero.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise InvalidArgument(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise InvalidArgument("each feature set needs at least two vectors")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    vals, vecs = np.linalg.eigh((cov_a + cov_a.T) / 2)
    sqrt_a = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
    inner = sqrt_a @ cov_b @ sqrt_a
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(eig, 0, None)).sum()
    fd = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt)
    return max(fd, 0.0)


def attribute_accuracy(edits, classifier, targets, sources=None, threshold=0.5):
    """Per-attribute accuracy of thresholded classifier outputs, and their mean.

    With ``sources`` given, attribute ``j`` is scored only on rows whose edit
    asked to change it; an attribute never requested is scored on all rows.
    """
    with torch.no_grad():
        probs = classifier(edits) if edits.dim() >= 3 and edits.shape[-1] == 3 else edits
    targets = torch.as_tensor(targets)
    if probs.shape != targets.shape:
        raise InvalidArgument(f"edits/targets misaligned: {tuple(probs.shape)} vs {tuple(targets.shape)}")
    tbits = targets > threshold
    correct = ((probs > threshold) == tbits).to(torch.float64)
    if sources is None:
        acc = correct.mean(dim=0)
    else:
        sources = torch.as_tensor(sources)
        if sources.shape != targets.shape:
            raise InvalidArgument("sources/targets misaligned")
        requested = (sources > threshold) != tbits
        acc = torch.empty(targets.shape[-1], dtype=torch.float64)
        for j in range(targets.shape[-1]):
            mask = requested[:, j]
            acc[j] = correct[mask, j].mean() if mask.any() else correct[:, j].mean()
    acc = acc.numpy()
    return acc, float(acc.mean())
