import pytest
import torch

from isf.core import ToyStack, ToyGenerator, ToyClassifier, build_handles


@pytest.fixture(scope="session")
def stack():
    return ToyStack(seed=7)


@pytest.fixture(scope="session")
def handles():
    return build_handles({"generator": {"kind": "toy", "seed": 7}})


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)
