"""Parameter checkpoints: JSON manifest plus one raw float32 blob per tensor.

Blobs hold the tensor's little-endian float32 values in row-major order;
shapes live only in the manifest. The model configuration is embedded in
the manifest and checked on load.
"""

from dataclasses import asdict
import json
import os

import numpy as np
import torch

from .config import ModelConfig


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, directory, extra=None):
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        fname = name + ".bin"
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(np.ascontiguousarray(arr).tobytes())
        entries.append({"name": name, "file": fname, "shape": list(arr.shape), "dtype": "float32"})
    manifest = {"format": "hoirel-ckpt/1", "model_config": asdict(model.cfg),
                "tensors": entries, "extra": extra or {}}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return directory


def read_manifest(directory):
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from None


def load_state(directory, manifest=None):
    manifest = manifest or read_manifest(directory)
    state = {}
    for e in manifest["tensors"]:
        path = os.path.join(directory, e["file"])
        with open(path, "rb") as fh:
            raw = fh.read()
        n = int(np.prod(e["shape"], dtype=np.int64))
        if len(raw) != 4 * n:
            raise CheckpointError(f"{path}: expected {4 * n} bytes, found {len(raw)}")
        state[e["name"]] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy())
    return state


def load_checkpoint(directory, expected_config=None):
    """Rebuild the model stored in ``directory``."""
    from .model import InteractionModel

    manifest = read_manifest(directory)
    cfg = ModelConfig(**manifest["model_config"])
    if expected_config is not None and asdict(expected_config) != asdict(cfg):
        raise CheckpointError(f"{directory}: model config does not match the expected config")
    model = InteractionModel(cfg)
    state = load_state(directory, manifest)
    own = model.state_dict()
    if set(state) != set(own):
        raise CheckpointError(f"{directory}: tensor names differ from the model "
                              f"(missing {sorted(set(own) - set(state))[:3]}, extra {sorted(set(state) - set(own))[:3]})")
    for name, t in state.items():
        if tuple(t.shape) != tuple(own[name].shape):
            raise CheckpointError(f"{directory}: {name} has shape {tuple(t.shape)}, expected {tuple(own[name].shape)}")
    model.load_state_dict(state)
    return model, manifest
