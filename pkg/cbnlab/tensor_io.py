"""Portable CBNT tensor files and manifest bundles.

File layout (all little-endian)::

    b"CBNT" | version u8 | dtype u8 (1 = f32, 2 = f64) | rank u8 |
    extents u64 * rank | row-major payload

A bundle is a directory holding ``manifest.json`` plus one ``<name>.cbnt`` per tensor.
Checkpoints, datasets and layer dumps all use bundles.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Mapping, Tuple, Union

import numpy as np
import torch

from .errors import MissingArtifactError, ShapeMismatchError

MAGIC = b"CBNT"
VERSION = 1
MANIFEST_NAME = "manifest.json"

_DTYPE_CODES = {torch.float32: 1, torch.float64: 2}
_NUMPY_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TORCH_DTYPES = {1: torch.float32, 2: torch.float64}

PathLike = Union[str, Path]


def encode_tensor(tensor: torch.Tensor) -> bytes:
    t = tensor.detach().cpu()
    if t.dtype not in _DTYPE_CODES:
        t = t.to(torch.float64)
    code = _DTYPE_CODES[t.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, t.dim())
    header += struct.pack(f"<{t.dim()}Q", *t.shape)
    payload = np.ascontiguousarray(t.numpy(), dtype=_NUMPY_DTYPES[code]).tobytes()
    return header + payload


def decode_tensor(data: bytes) -> torch.Tensor:
    if data[:4] != MAGIC:
        raise ValueError("not a CBNT file (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported CBNT version {version}")
    if code not in _NUMPY_DTYPES:
        raise ValueError(f"unsupported CBNT dtype code {code}")
    offset = 7
    shape: Tuple[int, ...] = struct.unpack_from(f"<{rank}Q", data, offset)
    offset += 8 * rank
    count = int(np.prod(shape)) if rank else 1
    dtype = _NUMPY_DTYPES[code]
    expected = count * dtype.itemsize
    if len(data) - offset != expected:
        raise ShapeMismatchError(
            f"CBNT payload holds {len(data) - offset} bytes, extents need {expected}"
        )
    array = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
    return torch.from_numpy(array.astype(dtype.newbyteorder("="), copy=True)).to(
        _TORCH_DTYPES[code]
    )


def write_tensor(target: Union[PathLike, BinaryIO], tensor: torch.Tensor) -> None:
    blob = encode_tensor(tensor)
    if hasattr(target, "write"):
        target.write(blob)  # type: ignore[union-attr]
        return
    Path(target).write_bytes(blob)


def read_tensor(source: Union[PathLike, BinaryIO]) -> torch.Tensor:
    if hasattr(source, "read"):
        return decode_tensor(source.read())  # type: ignore[union-attr]
    path = Path(source)
    if not path.exists():
        raise MissingArtifactError(f"Tensor file not found: {path}")
    return decode_tensor(path.read_bytes())


def save_bundle(
    directory: PathLike,
    tensors: Mapping[str, torch.Tensor],
    manifest: Mapping[str, Any],
) -> Path:
    """Write ``tensors`` and a JSON manifest listing them in order."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in tensors.items():
        filename = f"{name}.cbnt"
        write_tensor(root / filename, tensor)
        entries.append({"name": name, "file": filename, "shape": list(tensor.shape)})
    payload = dict(manifest)
    payload["tensors"] = entries
    (root / MANIFEST_NAME).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return root


def load_bundle(directory: PathLike) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise MissingArtifactError(f"Bundle manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    tensors: Dict[str, torch.Tensor] = {}
    for entry in manifest.get("tensors", []):
        tensor = read_tensor(root / entry["file"])
        if list(tensor.shape) != list(entry["shape"]):
            raise ShapeMismatchError(
                f"{entry['file']} has shape {list(tensor.shape)}, manifest says {entry['shape']}"
            )
        tensors[entry["name"]] = tensor
    return manifest, tensors
