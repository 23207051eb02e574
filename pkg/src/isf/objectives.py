"""Training losses for the critic and the mapper, and the weighted mapper objective."""

import math
from dataclasses import dataclass, asdict, fields

import torch
import torch.nn.functional as F

from .core import check_image
from .errors import InvalidArgument, NumericError

NORM_EPS = 1e-10


@dataclass(frozen=True)
class LossWeights:
    lambda_rf: float = 1.0
    lambda_cls: float = 1.0
    lambda_cont: float = 1.0
    lambda_nb: float = 0.1
    lambda_cyc: float = 1.0
    lambda_ds: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise InvalidArgument(f"{f.name} must be >= 0")

    def as_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    L_rf_D: float = 0.0
    L_rf_M: float = 0.0
    L_cls_D: float = 0.0
    L_cls_M: float = 0.0
    L_cont: float = 0.0
    L_nb: float = 0.0
    L_cyc: float = 0.0
    L_ds: float = 0.0
    total_M: float = 0.0
    total_D: float = 0.0
    ds_weight: float = 0.0

    def record(self, iteration):
        out = {"iter": int(iteration)}
        out.update({k: float(v) for k, v in asdict(self).items()})
        return out

    def non_finite(self):
        return [k for k, v in asdict(self).items() if not math.isfinite(float(v))]


def _check_finite(name, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError(f"{name}: non-finite input")


def r1_penalty(real_logits, real_images):
    """Mean squared gradient norm of the real/fake logit w.r.t. real pixels."""
    (grad,) = torch.autograd.grad(real_logits.sum(), real_images, create_graph=True,
                                  allow_unused=True)
    if grad is None:
        return real_logits.new_zeros(())
    return grad.pow(2).flatten(1).sum(dim=1).mean()


def adv_loss_critic(real_logits, fake_logits, real_images=None, r1_gamma=1.0):
    """Non-saturating critic loss plus ``r1_gamma / 2`` times the R1 penalty.

    ``real_images`` must require grad and be the input that produced
    ``real_logits``; pass ``None`` (or ``r1_gamma=0``) to skip R1.
    """
    _check_finite("adv_loss_critic", real_logits, fake_logits)
    loss = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    if real_images is not None and r1_gamma > 0:
        loss = loss + 0.5 * r1_gamma * r1_penalty(real_logits, real_images)
    return loss


def adv_loss_mapper(fake_logits):
    _check_finite("adv_loss_mapper", fake_logits)
    return F.softplus(-fake_logits).mean()


def _bce(logits, target, name):
    _check_finite(name, logits)
    if logits.shape != target.shape:
        raise InvalidArgument(f"{name}: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    if (target < 0).any() or (target > 1).any():
        raise InvalidArgument(f"{name}: attribute targets must lie in [0, 1]")
    return F.binary_cross_entropy_with_logits(logits, target)


def cls_loss_critic(cls_logits, d0):
    """Per-attribute sigmoid cross-entropy of critic logits on G(w) against d0."""
    return _bce(cls_logits, d0, "cls_loss_critic")


def cls_loss_mapper(cls_logits, d):
    return _bce(cls_logits, d, "cls_loss_mapper")


def _same_resolution(a, b, name):
    check_image(a)
    check_image(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"{name}: shape {tuple(a.shape)} vs {tuple(b.shape)}")


def unit_features(x, embedder):
    f = embedder.embed(x)
    return f / (f.norm(dim=-1, keepdim=True) + NORM_EPS)


def perceptual_distance(a, b, embedder):
    """Per-sample squared distance between unit-normalized embedder features."""
    _same_resolution(a, b, "perceptual_distance")
    return (unit_features(a, embedder) - unit_features(b, embedder)).pow(2).sum(dim=-1)


def content_loss(x_src, x_edit, perceptual):
    return perceptual_distance(x_src, x_edit, perceptual).mean()


def neighbour_loss(w, w_star):
    if w.shape != w_star.shape:
        raise InvalidArgument(f"neighbour_loss: shape {tuple(w.shape)} vs {tuple(w_star.shape)}")
    diff = (w - w_star).flatten(-2)
    return torch.linalg.vector_norm(diff, dim=-1).mean()


def _mean_abs(a, b, name):
    _same_resolution(a, b, name)
    return (a - b).abs().mean()


def cycle_loss(x_src, x_cycled):
    return _mean_abs(x_src, x_cycled, "cycle_loss")


def diversity_loss(x1, x2):
    return _mean_abs(x1, x2, "diversity_loss")


def ds_weight(iteration, total_iterations, lambda_ds_init):
    if total_iterations <= 0:
        raise InvalidArgument("total_iterations must be positive")
    if not 0 <= iteration <= total_iterations:
        raise InvalidArgument(f"iteration {iteration} outside [0, {total_iterations}]")
    return max(0.0, lambda_ds_init * (1.0 - iteration / total_iterations))


def total_mapper_objective(terms, weights, iteration, total_iterations):
    """Weighted mapper objective; the diversity term is subtracted.

    ``terms`` maps ``L_rf_M, L_cls_M, L_cont, L_nb, L_cyc, L_ds`` to scalars
    (floats or tensors); a ``LossReport`` works as well.
    """
    if isinstance(terms, LossReport):
        terms = asdict(terms)
    for key in ("L_rf_M", "L_cls_M", "L_cont", "L_nb", "L_cyc", "L_ds"):
        v = terms[key]
        if not math.isfinite(float(v.detach() if torch.is_tensor(v) else v)):
            raise NumericError(f"total_mapper_objective: {key} is not finite")
    lam_ds = ds_weight(iteration, total_iterations, weights.lambda_ds)
    return (weights.lambda_rf * terms["L_rf_M"] + weights.lambda_cls * terms["L_cls_M"]
            + weights.lambda_cont * terms["L_cont"] + weights.lambda_nb * terms["L_nb"]
            + weights.lambda_cyc * terms["L_cyc"] - lam_ds * terms["L_ds"])
