import hashlib
import json
import os
from typing import Any
import numpy as np
from exceptions import ShapeMismatchError, StaleArtifactError

BLOB_DTYPE = np.dtype("<f8")


def canonical_json(content: Any) -> str:
    return json.dumps(content, sort_keys=True, separators=(",", ":"), default=_to_jsonable)


def digest(content: Any) -> str:
    """sha256 of the canonical JSON form of plain config-like content."""
    return hashlib.sha256(canonical_json(content).encode("UTF-8")).hexdigest()


def array_digest(array: np.ndarray) -> str:
    blob = np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()
    return hashlib.sha256(blob).hexdigest()


def file_digest(file_path: str) -> str:
    sha = hashlib.sha256()
    with open(file_path, "rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def write_array(file_path: str, array: np.ndarray, kind: str = "array", **meta) -> dict:
    """Writes `<file_path>.bin` (little-endian float64) and its `<file_path>.json` sidecar."""
    data = np.ascontiguousarray(array, dtype=BLOB_DTYPE)
    base = _strip_suffix(file_path)
    with open(f"{base}.bin", "wb") as stream:
        stream.write(data.tobytes())

    sidecar = {
        "shape": list(data.shape),
        "dtype": "float64-le",
        "kind": kind,
        "sha256": array_digest(data),
        **meta,
    }
    write_json(f"{base}.json", sidecar)
    return sidecar


def read_array(file_path: str, expected_shape: tuple | None = None) -> np.ndarray:
    base = _strip_suffix(file_path)
    sidecar = read_json(f"{base}.json")
    shape = tuple(sidecar["shape"])
    data = np.fromfile(f"{base}.bin", dtype=BLOB_DTYPE)

    if data.size != int(np.prod(shape)):
        raise ShapeMismatchError(
            f"{base}.bin holds {data.size} values, sidecar announces shape {shape}"
        )
    data = data.reshape(shape)
    if expected_shape is not None and tuple(expected_shape) != shape:
        raise ShapeMismatchError(f"{base}: expected shape {tuple(expected_shape)}, found {shape}")
    if array_digest(data) != sidecar["sha256"]:
        raise StaleArtifactError(f"{base}.bin does not match the digest in its sidecar")
    return data.astype(np.float64)


def read_sidecar(file_path: str) -> dict:
    return read_json(f"{_strip_suffix(file_path)}.json")


def write_json(file_path: str, content: Any):
    with open(file_path, "w", encoding="UTF-8") as stream:
        json.dump(content, stream, indent=2, sort_keys=True, default=_to_jsonable)
        stream.write("\n")


def read_json(file_path: str) -> dict:
    with open(file_path, "r", encoding="UTF-8") as stream:
        return json.load(stream)


def _strip_suffix(file_path: str) -> str:
    root, ending = os.path.splitext(file_path)
    return root if ending in (".bin", ".json") else file_path


def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Cannot serialize {type(value).__name__}")
