"""Labeled latent-code datasets: sample codes, render, label with the classifier."""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import CorruptDataset, InvalidArgument

MANIFEST = "manifest.json"
CODES = "codes.f32"
LABELS = "labels.f32"


@dataclass(eq=False)
class LatentDataset:
    codes: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float32)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        n = len(self.codes)
        if len(self.labels) != n:
            raise InvalidArgument("codes and labels disagree on N")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 1):
            raise InvalidArgument("labels must lie in [0, 1]")
        both = np.concatenate([self.train_idx, self.test_idx])
        if len(both) != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise InvalidArgument("train/test splits must be disjoint and exhaustive")

    def __len__(self):
        return len(self.codes)

    def split(self, name):
        idx = {"train": self.train_idx, "test": self.test_idx}[name]
        return torch.from_numpy(self.codes[idx]), torch.from_numpy(self.labels[idx])

    def equals(self, other):
        return (np.array_equal(self.codes, other.codes)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.train_idx, other.train_idx)
                and np.array_equal(self.test_idx, other.test_idx)
                and self.provenance == other.provenance)


def build(generator, classifier, n_total, split_fraction, rng, chunk=1024):
    """Sample ``n_total`` codes, label ``classifier(generator(w))`` and split.

    ``rng`` is an integer seed or a ``torch.Generator``; the train split gets
    ``round(n_total * split_fraction)`` rows.
    """
    if n_total < 2:
        raise InvalidArgument("n_total must be >= 2")
    if not 0 < split_fraction < 1:
        raise InvalidArgument("split_fraction must lie in (0, 1)")
    res = getattr(classifier, "resolution", None)
    if res is not None and tuple(res) != tuple(generator.resolution):
        raise InvalidArgument(
            f"classifier resolution {tuple(res)} != generator resolution {tuple(generator.resolution)}")
    seed = None
    if isinstance(rng, int):
        seed = rng
        rng = torch.Generator().manual_seed(rng)
    codes = generator.sample_latent(n_total, rng).to(torch.float32)
    labels = []
    with torch.no_grad():
        for start in range(0, n_total, chunk):
            labels.append(classifier.classify(generator.generate(codes[start:start + chunk])))
    labels = torch.cat(labels).clamp(0, 1)
    perm = torch.randperm(n_total, generator=rng).numpy()
    n_train = int(round(n_total * split_fraction))
    n_train = min(max(n_train, 1), n_total - 1)
    provenance = {"generator": generator.name, "generator_digest": generator.digest(),
                  "classifier": classifier.name, "seed": seed,
                  "split_fraction": split_fraction}
    return LatentDataset(codes.numpy(), labels.numpy(), np.sort(perm[:n_train]),
                         np.sort(perm[n_train:]), provenance)


def _sha(buf):
    return hashlib.sha256(buf).hexdigest()


def save(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    codes = dataset.codes.astype("<f4").tobytes()
    labels = dataset.labels.astype("<f4").tobytes()
    with open(os.path.join(directory, CODES), "wb") as fh:
        fh.write(codes)
    with open(os.path.join(directory, LABELS), "wb") as fh:
        fh.write(labels)
    manifest = {
        "format_version": 1,
        "dtype": "float32", "byteorder": "little", "order": "row-major",
        "codes_shape": list(dataset.codes.shape),
        "labels_shape": list(dataset.labels.shape),
        "codes_sha256": _sha(codes), "labels_sha256": _sha(labels),
        "train_idx": dataset.train_idx.tolist(), "test_idx": dataset.test_idx.tolist(),
        "provenance": dataset.provenance,
    }
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1)


def _read(directory, name, shape, sha):
    with open(os.path.join(directory, name), "rb") as fh:
        buf = fh.read()
    if len(buf) != 4 * int(np.prod(shape)):
        raise CorruptDataset(f"{name}: {len(buf)} bytes, manifest shape {shape}")
    if _sha(buf) != sha:
        raise CorruptDataset(f"{name}: digest mismatch")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


def load(directory):
    try:
        with open(os.path.join(directory, MANIFEST)) as fh:
            man = json.load(fh)
        codes = _read(directory, CODES, man["codes_shape"], man["codes_sha256"])
        labels = _read(directory, LABELS, man["labels_shape"], man["labels_sha256"])
        return LatentDataset(codes, labels, man["train_idx"], man["test_idx"],
                             man.get("provenance", {}))
    except CorruptDataset:
        raise
    except (OSError, KeyError, ValueError) as exc:
        raise CorruptDataset(f"cannot load dataset from {directory}: {exc}") from exc
