import itertools

import numpy as np
import pytest
import scipy.linalg
import torch

from isf import metrics
from isf.core import GradientPerceptualEmbedder, PooledPerceptualEmbedder, EmbedderHandle
from isf.editing import build_path
from isf.errors import InvalidArgument, UndefinedSimilarity
from isf.isf_net import ISFDims, init_params
from isf.objectives import perceptual_distance

F64 = torch.float64


class Flat(EmbedderHandle):
    def embed(self, x):
        return x.reshape(*x.shape[:-2], -1) if x.shape[-1] != 3 else x.flatten(-3)


def identity_generator(w):
    return w


# FRS

def test_frs_self_and_negative(handles):
    x = handles.generator(torch.randn(4, 16, generator=torch.Generator().manual_seed(0)))
    assert metrics.frs(x, x, handles.identity).item() == pytest.approx(1.0, abs=1e-6)

    class Neg(EmbedderHandle):
        def embed(self, img):
            return img.flatten(-3) * (1 if img[0, 0, 0] > 0 else -1)

    a = torch.full((32, 32, 3), 0.5)
    assert metrics.frs(a, -a, Flat()).item() == pytest.approx(-1.0, abs=1e-6)


def test_frs_symmetric_bounded(handles):
    g = torch.Generator().manual_seed(3)
    a = handles.generator(torch.randn(50, 4, 16, generator=g))
    b = handles.generator(torch.randn(50, 4, 16, generator=g))
    ab, ba = metrics.frs(a, b, handles.identity), metrics.frs(b, a, handles.identity)
    assert torch.allclose(ab, ba)
    assert (ab.abs() <= 1).all()


def test_frs_zero_embedding(handles):
    with pytest.raises(UndefinedSimilarity):
        metrics.frs(torch.zeros(32, 32, 3), torch.zeros(32, 32, 3), handles.identity)


def test_frs_toy_oracle(handles, stack):
    g = torch.Generator().manual_seed(0)
    w = 0.3 * torch.randn(200, 4, 16, generator=g)
    shift = torch.from_numpy(
        (torch.randn(200, 4, generator=g).double().numpy() @ stack.Q_attr).reshape(200, 4, 16)).float()
    edited = metrics.frs(handles.generator(w), handles.generator(w + shift), handles.identity)
    assert edited.min() >= 0.99
    # E|cos| of 8-d content codes is ~0.29, within one standard error of the
    # bound for a single 200-pair batch, so the bound is checked on the mean
    # of 50 batches of 200 pairs.
    w1 = torch.randn(50, 200, 4, 16, generator=g)
    w2 = torch.randn(50, 200, 4, 16, generator=g)
    cross = metrics.frs(handles.generator(w1), handles.generator(w2), handles.identity)
    assert cross.abs().mean(dim=1).mean() <= 0.3


# PPL

def test_ppl_constant_path(handles):
    s = torch.randn(5, 4, 16, dtype=F64)
    assert metrics.ppl((s, s.clone()), handles.generator, handles.perceptual, 1e-4) == 0.0


@pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.5, 3.0])
def test_ppl_identity_closed_form(eps):
    g = torch.Generator().manual_seed(1)
    s = torch.randn(1, 4, 16, generator=g, dtype=F64)
    s_star = torch.randn(1, 4, 16, generator=g, dtype=F64)
    got = metrics.ppl((s, s_star), identity_generator, Flat(), eps, rng=g)
    expected = (s_star - s).pow(2).sum().item()
    assert abs(got - expected) <= 1e-10 * max(1.0, expected) / min(eps, 1.0) ** 0


def test_ppl_rejects_bad_epsilon():
    s = torch.zeros(1, 4, 16)
    with pytest.raises(InvalidArgument):
        metrics.ppl((s, s), identity_generator, Flat(), 0.0)


def test_ppl_finite_epsilon_stability(handles):
    g = torch.Generator().manual_seed(2)
    s = 0.5 * torch.randn(200, 4, 16, generator=g, dtype=F64)
    s_star = 0.5 * torch.randn(200, 4, 16, generator=g, dtype=F64)
    a = metrics.ppl((s, s_star), handles.generator, handles.perceptual, 1e-4,
                    rng=torch.Generator().manual_seed(0))
    b = metrics.ppl((s, s_star), handles.generator, handles.perceptual, 5e-5,
                    rng=torch.Generator().manual_seed(0))
    assert abs(a - b) / a <= 0.05


# PIR

def test_pir_constant_increments():
    assert metrics.pir_from_distances([0.2, 0.2, 0.2], 0.6) == 0.0


def test_pir_hand_computed():
    assert metrics.pir_from_distances([0.1, 0.3, 0.2], 0.5, 0.0) == pytest.approx(0.4)


def test_pir_homogeneous():
    rng = np.random.default_rng(0)
    for _ in range(50):
        inc = rng.random(10)
        end = rng.random() + 0.1
        base = metrics.pir_from_distances(inc, end, 0.0)
        for k in (0.5, 3.0):
            assert metrics.pir_from_distances(k * inc, k * end, 0.0) == pytest.approx(base, rel=1e-12)
        assert base >= 0


def test_pir_on_linear_generator_path_is_zero():
    # identity generator + linear embedder: equal code steps give equal increments
    class Lin(EmbedderHandle):
        def embed(self, x):
            return x.flatten(-2)

    def dist(a, b, emb):
        return (emb(a) - emb(b)).pow(2).sum(-1)

    g = torch.Generator().manual_seed(0)
    path = build_path(torch.randn(4, 16, generator=g, dtype=F64),
                      torch.randn(4, 16, generator=g, dtype=F64), 10)
    assert metrics.pir(path, identity_generator, Lin(), 1e-6, distance=dist) <= 1e-9


def test_pir_requires_two_steps():
    with pytest.raises(InvalidArgument):
        metrics.InterpolationPath(torch.zeros(2, 4, 16), torch.zeros(4, 16), torch.zeros(4, 16))
    with pytest.raises(InvalidArgument):
        metrics.pir_from_distances([0.1], 0.5)


def test_pir_toy_path_non_negative(handles):
    g = torch.Generator().manual_seed(4)
    path = build_path(torch.randn(4, 16, generator=g), torch.randn(4, 16, generator=g), 10)
    assert metrics.pir(path, handles.generator, handles.perceptual) >= 0


# diversity

class _NoiseFree(torch.nn.Module):
    dims = ISFDims()

    def forward(self, w, z, d):
        return w * 1.0


def _rand_mapper(seed):
    net = init_params(ISFDims(), seed)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(0.05 * torch.randn(p.shape, generator=g))
    return net


def test_diversity_zero_when_noise_ignored(handles):
    g = torch.Generator().manual_seed(0)
    codes, targets = torch.randn(5, 4, 16, generator=g), torch.rand(5, 4, generator=g)
    score = metrics.diversity_score((codes, targets), handles.generator, _NoiseFree(),
                                    handles.perceptual, 5, 4, g)
    assert score == 0.0


def test_pairwise_two_samples_reduces_to_single_distance(handles):
    g = torch.Generator().manual_seed(1)
    imgs = handles.generator(torch.randn(2, 4, 16, generator=g))
    pair = metrics.mean_pairwise_distance(imgs, handles.perceptual).item()
    direct = perceptual_distance(imgs[0], imgs[1], handles.perceptual).item()
    assert pair == pytest.approx(direct, abs=1e-7)


def test_diversity_matches_double_loop(handles):
    mapper = _rand_mapper(3)
    g = torch.Generator().manual_seed(2)
    codes, targets = torch.randn(6, 4, 16, generator=g), torch.rand(6, 4, generator=g)
    score = metrics.diversity_score((codes, targets), handles.generator, mapper,
                                    handles.perceptual, 6, 5, torch.Generator().manual_seed(9))
    zg = torch.Generator().manual_seed(9)
    z = torch.randn(6, 5, 32, generator=zg)
    per_input = []
    with torch.no_grad():
        for i in range(6):
            imgs = [handles.generator(mapper(codes[i], z[i, s], targets[i])) for s in range(5)]
            ds = [perceptual_distance(imgs[a], imgs[b], handles.perceptual).item()
                  for a, b in itertools.combinations(range(5), 2)]
            per_input.append(sum(ds) / len(ds))
    assert score == pytest.approx(sum(per_input) / 6, abs=1e-7)


def test_pairwise_permutation_invariant(handles):
    g = torch.Generator().manual_seed(5)
    imgs = handles.generator(torch.randn(7, 4, 16, generator=g, dtype=torch.float64))
    perm = torch.randperm(7, generator=g)
    a = metrics.mean_pairwise_distance(imgs, handles.perceptual).item()
    b = metrics.mean_pairwise_distance(imgs[perm], handles.perceptual).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_diversity_argument_checks(handles):
    codes, targets = torch.zeros(3, 4, 16), torch.zeros(3, 4)
    with pytest.raises(InvalidArgument):
        metrics.diversity_score((codes, targets), handles.generator, _NoiseFree(),
                                handles.perceptual, 3, 1)
    with pytest.raises(InvalidArgument):
        metrics.diversity_score((codes, targets), handles.generator, _NoiseFree(),
                                handles.perceptual, 10, 3)


# Frechet distance

def test_frechet_identical_sets():
    x = np.random.default_rng(0).normal(size=(100, 6))
    assert metrics.frechet_distance(x, x.copy()) <= 1e-8


def test_frechet_one_dimensional_closed_form():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, 10_000)
    b = rng.normal(2.0, 1.0, 10_000)
    assert abs(metrics.frechet_distance(a, b) - 4.0) <= 0.2


def test_frechet_symmetric_and_matches_sqrtm():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(300, 5))
    b = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5)) + 0.3
    ab, ba = metrics.frechet_distance(a, b), metrics.frechet_distance(b, a)
    assert abs(ab - ba) <= 1e-9
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ref = np.sum((a.mean(0) - b.mean(0)) ** 2) + np.trace(
        ca + cb - 2 * np.real(scipy.linalg.sqrtm(ca @ cb)))
    assert ab == pytest.approx(ref, rel=1e-8)
    assert ab >= 0


def test_frechet_argument_checks():
    with pytest.raises(InvalidArgument):
        metrics.frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(InvalidArgument):
        metrics.frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))


# attribute accuracy

def test_accuracy_perfect_oracle(handles, stack):
    g = torch.Generator().manual_seed(0)
    w = torch.randn(200, 4, 16, generator=g)
    target = (stack.projections(w)[0] > 0).float()
    per_attr, macc = metrics.attribute_accuracy(handles.generator(w), handles.classifier, target)
    assert macc == 1.0 and (per_attr == 1.0).all()


def test_accuracy_coin_flip():
    g = torch.Generator().manual_seed(0)
    probs = torch.rand(1000, 4, generator=g)
    targets = (torch.rand(1000, 4, generator=g) > 0.5).float()
    per_attr, macc = metrics.attribute_accuracy(probs, None, targets)
    assert abs(macc - 0.5) <= 0.05
    assert np.all(np.abs(per_attr - 0.5) <= 0.05)


def test_accuracy_only_scores_requested_changes():
    probs = torch.tensor([[0.9, 0.9], [0.1, 0.9]])
    targets = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
    sources = torch.tensor([[0.0, 0.0], [0.0, 1.0]])
    per_attr, macc = metrics.attribute_accuracy(probs, None, targets, sources)
    # attribute 0 requested in both rows (1 of 2 right); attribute 1 never requested
    assert per_attr[0] == 0.5
    assert per_attr[1] == 0.5
    with pytest.raises(InvalidArgument):
        metrics.attribute_accuracy(probs, None, targets[:1])


def test_report_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        metrics.MetricsReport({"frs": float("nan")})
