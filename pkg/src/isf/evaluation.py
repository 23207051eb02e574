"""Held-out evaluation protocol shared by the CLI and the acceptance checks."""

from dataclasses import dataclass, asdict, fields

import numpy as np
import torch

from . import metrics
from .editing import build_path
from .errors import InvalidArgument


@dataclass(frozen=True)
class Protocol:
    n_codes: int = 500
    seed: int = 123
    ppl_epsilon: float = 1e-4
    pir_steps: int = 10
    pir_eps_stab: float = 1e-6
    diversity_inputs: int = 100
    diversity_samples: int = 10

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise InvalidArgument(f"unknown metric protocol keys: {sorted(set(d) - known)}")
        return cls(**d)

    def as_dict(self):
        return asdict(self)


def single_flip_edits(mapper, codes, labels, rng):
    """Edit every code once per attribute, flipping only that attribute.

    Returns ``(sources, targets, edited, attribute)`` stacked attribute-major,
    so row ``j * N + i`` flips attribute ``j`` of code ``i``.
    """
    N, m = labels.shape
    base = (labels > 0.5).to(torch.float32)
    z = torch.randn((N, mapper.dims.n), generator=rng)
    srcs, tgts, outs, attrs = [], [], [], []
    with torch.no_grad():
        for j in range(m):
            d = base.clone()
            d[:, j] = 1 - d[:, j]
            srcs.append(codes)
            tgts.append(d)
            outs.append(mapper(codes, z, d))
            attrs.append(torch.full((N,), j))
    return torch.cat(srcs), torch.cat(tgts), torch.cat(outs), torch.cat(attrs)


def evaluate(handles, mapper, codes, labels, protocol=Protocol(), pir_rows=None):
    """Run the full metric suite on held-out ``codes``; returns a MetricsReport.

    ``pir_rows``, if a list, receives one ``(index, attribute, pir)`` per path.
    """
    if len(codes) < protocol.n_codes:
        raise InvalidArgument(f"need {protocol.n_codes} held-out codes, have {len(codes)}")
    codes, labels = codes[:protocol.n_codes], labels[:protocol.n_codes]
    G = handles.generator
    rng = torch.Generator().manual_seed(protocol.seed)
    src, tgt, edited, attr = single_flip_edits(mapper, codes, labels, rng)
    N, m = labels.shape

    with torch.no_grad():
        x_src, x_edit = G(src), G(edited)
        per_attr, macc = metrics.attribute_accuracy(x_edit, handles.classifier, tgt,
                                                    sources=labels.repeat(m, 1))
        frs = metrics.frs(x_src, x_edit, handles.identity).mean().item()
        ppl = metrics.ppl((src, edited), G, handles.perceptual, protocol.ppl_epsilon, rng)
        pirs = []
        for i in range(len(src)):
            path = build_path(src[i], edited[i], protocol.pir_steps, int(attr[i]))
            pirs.append(metrics.pir(path, G, handles.perceptual, protocol.pir_eps_stab))
            if pir_rows is not None:
                pir_rows.append((i % N, int(attr[i]), pirs[-1]))
        div = metrics.diversity_score((codes, tgt[:N]), G, mapper, handles.perceptual,
                                      min(protocol.diversity_inputs, N),
                                      protocol.diversity_samples, rng)
        fd = metrics.frechet_distance(handles.perceptual(G(codes)).numpy(),
                                      handles.perceptual(x_edit).numpy())

    values = {"frs": frs, "ppl": ppl, "pir": float(np.mean(pirs)), "diversity": div,
              "frechet": fd, "mAcc": macc}
    values.update({f"acc_{j}": float(a) for j, a in enumerate(per_attr)})
    meta = {"protocol": protocol.as_dict(), "n_edits": int(len(src)),
            "generator": G.name, "generator_digest": G.digest(),
            "embedders": {"perceptual": handles.perceptual.name,
                          "identity": handles.identity.name}}
    return metrics.MetricsReport(values, meta)
