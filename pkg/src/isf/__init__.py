"""Latent-code editing with an implicit style function over a frozen generator."""

from .core import (ToyStack, ToyGenerator, ToyClassifier, ToyIdentityEmbedder,
                   PooledPerceptualEmbedder, Handles, build_handles, sample_noise,
                   toy_generate, toy_classify, toy_identity_embed)
from .isf_net import ISF, ISFDims, adaln, init_params
from .critic import Critic

__version__ = "0.1.0"
