"""Generator (and optional style encoder) checkpoints as CBNT bundles."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import torch

from .errors import MissingArtifactError
from .generators import Generator, GeneratorSpec
from .synth_tasks import StyleEncoder
from .tensor_io import MANIFEST_NAME, load_bundle, save_bundle

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    generator: Generator
    encoder: Optional[StyleEncoder]
    manifest: Dict[str, Any]


def save_checkpoint(
    generator: Generator,
    directory: PathLike,
    encoder: Optional[StyleEncoder] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    tensors: Dict[str, torch.Tensor] = {}
    for key, value in generator.state_dict().items():
        tensors[f"generator.{key}"] = value
    encoder_info = None
    if encoder is not None:
        for key, value in encoder.state_dict().items():
            tensors[f"encoder.{key}"] = value
        encoder_info = {"latent_dim": encoder.latent_dim, "width": encoder.head.in_features // 4}
    manifest: Dict[str, Any] = {
        "kind": "checkpoint",
        "generator": generator.spec.to_dict(),
        "layers": [norm.kind for norm in generator.norm_layers()],
        "encoder": encoder_info,
    }
    manifest.update(extra or {})
    return save_bundle(directory, tensors, manifest)


def load_checkpoint(directory: PathLike) -> Checkpoint:
    root = Path(directory)
    if not (root / MANIFEST_NAME).exists():
        raise MissingArtifactError(f"Checkpoint not found: {root}")
    manifest, tensors = load_bundle(root)
    if manifest.get("kind") != "checkpoint":
        raise ValueError(f"{root} is not a checkpoint bundle")

    spec = GeneratorSpec(**manifest["generator"])
    generator = Generator(spec)
    dtype = tensors["generator.out.weight"].dtype
    generator.to(dtype)
    generator.load_state_dict(_prefixed(tensors, "generator."))

    encoder = None
    info = manifest.get("encoder")
    if info:
        encoder = StyleEncoder(info["latent_dim"], info["width"]).to(dtype)
        encoder.load_state_dict(_prefixed(tensors, "encoder."))
    return Checkpoint(generator=generator, encoder=encoder, manifest=manifest)


def _prefixed(tensors: Mapping[str, torch.Tensor], prefix: str) -> Dict[str, torch.Tensor]:
    return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}
