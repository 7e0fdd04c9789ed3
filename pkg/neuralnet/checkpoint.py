import os
import numpy as np
import torch
from exceptions import ShapeMismatchError
from neuralnet.stage_model import StageArchitecture, StageModel, parameter_count
from services.artifact_store import read_array, read_json, write_array, write_json
from services.version_info import VersionInfo


def flatten_parameters(model: StageModel) -> np.ndarray:
    state = model.state_dict()
    if not state:
        return np.zeros(0)
    return np.concatenate([tensor.detach().cpu().numpy().ravel() for tensor in state.values()])


def save_checkpoint(directory: str, name: str, model: StageModel, **extra) -> dict:
    """`<name>.json` manifest (architecture, seed, parameter layout, extras) plus `<name>.bin` blob."""
    os.makedirs(directory, exist_ok=True)
    blob_path = os.path.join(directory, f"{name}.bin")
    sidecar = write_array(blob_path, flatten_parameters(model), kind="parameters")
    manifest = {
        "kind": "checkpoint",
        "architecture": model.architecture.to_dict(),
        "seed": model.seed,
        "parameters": parameter_count(model),
        "layout": [[key, list(tensor.shape)] for key, tensor in model.state_dict().items()],
        "sha256": sidecar["sha256"],
        "versions": VersionInfo().get_package_versions(),
        **extra,
    }
    write_json(os.path.join(directory, f"{name}.manifest.json"), manifest)
    return manifest


def load_checkpoint(directory: str, name: str) -> tuple[StageModel, dict]:
    manifest_path = os.path.join(directory, f"{name}.manifest.json")
    manifest = read_json(manifest_path)
    VersionInfo().check_layout(manifest, manifest_path)

    model = StageModel(StageArchitecture(**manifest["architecture"]), seed=manifest["seed"])
    values = read_array(os.path.join(directory, f"{name}.bin"))
    state = model.state_dict()
    expected = sum(tensor.numel() for tensor in state.values())
    if values.size != expected:
        raise ShapeMismatchError(f"checkpoint {name} holds {values.size} values, the architecture needs {expected}")

    offset = 0
    restored = {}
    for key, tensor in state.items():
        size = tensor.numel()
        restored[key] = torch.from_numpy(values[offset : offset + size].copy()).view(tensor.shape).to(tensor.dtype)
        offset += size
    model.load_state_dict(restored)
    return model, manifest
