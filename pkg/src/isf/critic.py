"""Multi-task critic with a shared conv trunk, a real/fake head and an attribute head."""

import math

import torch
from torch import nn
import torch.nn.functional as F

from .core import check_image
from .errors import InvalidArgument


class Critic(nn.Module):
    """Stride-2 conv trunk followed by global average pooling.

    The trunk has ``log2(resolution) - 1`` blocks; channel counts double
    from ``width`` per block and are capped at ``8 * width``.  Images at
    ``input_resolution`` (a multiple of ``resolution``) are area-downsampled
    before the trunk.
    """

    def __init__(self, num_attributes, resolution=32, width=32, input_resolution=None):
        super().__init__()
        if resolution < 4 or resolution & (resolution - 1):
            raise InvalidArgument("critic resolution must be a power of two >= 4")
        input_resolution = input_resolution or resolution
        if input_resolution % resolution:
            raise InvalidArgument("input resolution must be a multiple of the critic resolution")
        self.resolution = resolution
        self.input_resolution = input_resolution
        blocks, c_in = [], 3
        for i in range(int(math.log2(resolution)) - 1):
            c_out = width * min(2 ** i, 8)
            blocks += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.trunk = nn.Sequential(*blocks)
        self.rf_head = nn.Linear(c_in, 1)
        self.cls_head = nn.Linear(c_in, num_attributes)

    def features(self, x):
        check_image(x, (self.input_resolution, self.input_resolution))
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        x = x.permute(0, 3, 1, 2)
        if self.input_resolution != self.resolution:
            x = F.avg_pool2d(x, self.input_resolution // self.resolution)
        h = self.trunk(x).mean(dim=(2, 3))
        return h.squeeze(0) if squeeze else h

    def discriminate(self, x):
        return self.rf_head(self.features(x)).squeeze(-1)

    def classify_logits(self, x):
        return self.cls_head(self.features(x))

    def forward(self, x):
        h = self.features(x)
        return self.rf_head(h).squeeze(-1), self.cls_head(h)


def discriminate(x, params):
    return params.discriminate(x)


def classify_logits(x, params):
    return params.classify_logits(x)
