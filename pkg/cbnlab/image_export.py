"""Binary PPM (P6) image dumps: translation grids and single feature planes."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image

from .errors import ShapeMismatchError

PathLike = Union[str, Path]


def to_rgb_array(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] -> (H, W, 3) uint8."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a (3, H, W) image, got {tuple(image.shape)}")
    scaled = ((image.detach().to(torch.float64).clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return scaled.permute(1, 2, 0).cpu().numpy().astype(np.uint8)


def plane_to_rgb_array(plane: torch.Tensor, low: Optional[float] = None, high: Optional[float] = None) -> np.ndarray:
    """Min-max scaled gray rendering of one (H, W) plane; a constant plane renders mid-gray."""
    p = plane.detach().to(torch.float64)
    lo = float(p.min().item()) if low is None else low
    hi = float(p.max().item()) if high is None else high
    if hi - lo <= 0:
        gray = np.full(p.shape, 128, dtype=np.uint8)
    else:
        gray = ((p - lo) / (hi - lo) * 255.0).round().clamp(0, 255).cpu().numpy().astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=2)


def save_ppm(array: np.ndarray, path: PathLike) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="RGB").save(output_path, format="PPM")
    return output_path


def translation_grid(
    inputs: torch.Tensor,
    outputs: Sequence[torch.Tensor],
    gap: int = 2,
) -> np.ndarray:
    """One row per input: the input, then its translation under every code.

    ``outputs[k]`` holds the batch translated under code ``k``.
    """
    rows = inputs.shape[0]
    if any(o.shape != inputs.shape for o in outputs):
        raise ShapeMismatchError("every output batch must match the input batch shape")
    h, w = inputs.shape[-2], inputs.shape[-1]
    cols = 1 + len(outputs)
    grid = np.full((rows * (h + gap) - gap, cols * (w + gap) - gap, 3), 255, dtype=np.uint8)
    for r in range(rows):
        tiles = [inputs[r]] + [o[r] for o in outputs]
        for c, tile in enumerate(tiles):
            top, left = r * (h + gap), c * (w + gap)
            grid[top : top + h, left : left + w] = to_rgb_array(tile)
    return grid


def save_translation_grid(
    inputs: torch.Tensor,
    outputs: Sequence[torch.Tensor],
    path: PathLike,
) -> Path:
    return save_ppm(translation_grid(inputs, outputs), path)


def save_plane(plane: torch.Tensor, path: PathLike) -> Path:
    return save_ppm(plane_to_rgb_array(plane), path)


def read_ppm(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))
