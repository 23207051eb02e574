"""Flat float32 tensor files: ``<stem>.f32`` buffer plus ``<stem>.json`` header."""

import hashlib
import json
import os

import numpy as np
import torch

from .errors import InvalidCheckpoint

FORMAT_VERSION = 1


def save_tensors(stem, tensors):
    """Write a name->tensor mapping as little-endian float32 with a JSON index.

    Returns the SHA-256 of the buffer.
    """
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(
            value.detach().cpu().numpy() if torch.is_tensor(value) else value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    buf = b"".join(chunks)
    sha = hashlib.sha256(buf).hexdigest()
    header = {"format_version": FORMAT_VERSION, "dtype": "float32", "byteorder": "little",
              "nbytes": offset, "sha256": sha, "tensors": entries}
    with open(f"{stem}.f32", "wb") as fh:
        fh.write(buf)
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, indent=1)
    return sha


def load_tensors(stem):
    try:
        with open(f"{stem}.json") as fh:
            header = json.load(fh)
        with open(f"{stem}.f32", "rb") as fh:
            buf = fh.read()
    except (OSError, ValueError) as exc:
        raise InvalidCheckpoint(f"cannot read tensor file {stem}: {exc}") from exc
    if len(buf) != header["nbytes"] or hashlib.sha256(buf).hexdigest() != header["sha256"]:
        raise InvalidCheckpoint(f"tensor buffer {stem}.f32 does not match its header")
    out = {}
    for e in header["tensors"]:
        arr = np.frombuffer(buf, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        out[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).astype(np.float32))
    return out


def module_state(module):
    return {k: v for k, v in module.state_dict().items()}


def load_module_state(module, tensors):
    missing = set(module.state_dict()) - set(tensors)
    if missing:
        raise InvalidCheckpoint(f"missing tensors: {sorted(missing)}")
    module.load_state_dict({k: tensors[k] for k in module.state_dict()})


def remove_stem(stem):
    for ext in (".f32", ".json"):
        try:
            os.remove(stem + ext)
        except FileNotFoundError:
            pass
