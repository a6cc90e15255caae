"""Raw f32 tensors with a JSON sidecar, the layout the Rust side reads.

``<file>`` holds little-endian f32 values in row-major order and
``<file>.json`` holds ``{"dims":[...],"order":"row-major","dtype":"f32le"}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def sidecar(path: Path) -> Path:
    return Path(str(path) + ".json")


def write_tensor(path: Path, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(a.tobytes())
    header = {"dims": list(a.shape), "order": "row-major", "dtype": "f32le"}
    sidecar(path).write_text(json.dumps(header, separators=(",", ":")))


def read_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    header = json.loads(sidecar(path).read_text())
    if header.get("order") != "row-major" or header.get("dtype") != "f32le":
        raise ValueError(f"{path}: unsupported layout {header.get('order')}/{header.get('dtype')}")
    dims = [int(d) for d in header["dims"]]
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: {data.size} values on disk but dims {dims}")
    return data.reshape(dims).astype(np.float32)
