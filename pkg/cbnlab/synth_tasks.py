"""Synthetic multi-mapping translation tasks.

Inputs are gray renderings of one anti-aliased rectangle or disc on a dark
background.  Targets recolor the foreground with a hue selected by the latent
code, so every mapping is known in closed form and mode collapse can be
measured exactly.

Per-channel target for channel ``ch`` (channel angle ``2*pi*ch/3``)::

    y_ch = x + coverage * (sat * cos(h - 2*pi*ch/3) + brightness)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Literal, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from .constants import (
    BACKGROUND_LEVEL,
    BRIGHTNESS_SCALE,
    DESK_DOMAINS,
    DESK_EXTENT,
    DESK_STYLE_DIM,
    DESK_TEST_SAMPLES,
    DESK_TRAIN_SAMPLES,
    HUE_SATURATION,
)
from .errors import InvalidExtentError, ShapeMismatchError
from .layers import Conv2d, init_gaussian_
from .tensor_core import PRNGState
from .tensor_io import load_bundle, save_bundle

TaskKind = Literal["discrete", "continuous"]
Split = Literal["train", "test"]

ABSTAIN = -1
CHROMA_FLOOR = 1e-6
FOREGROUND_FRACTION = 0.5
SUPERSAMPLE = 4
FOREGROUND_LUMA = 0.2

_CHANNEL_ANGLES = torch.tensor([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0], dtype=torch.float64)


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = "discrete"
    domains: int = DESK_DOMAINS
    style_dim: int = DESK_STYLE_DIM
    extent: int = DESK_EXTENT
    samples: int = DESK_TRAIN_SAMPLES
    test_samples: int = DESK_TEST_SAMPLES
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"task kind must be 'discrete' or 'continuous', got '{self.kind}'")
        if self.domains < 2:
            raise ValueError(f"need at least 2 domains, got {self.domains}")
        if self.kind == "continuous" and self.style_dim < 2:
            raise ValueError("continuous tasks read hue and brightness off a style of length >= 2")
        if self.extent < 8 or self.extent % 4:
            raise InvalidExtentError(f"extent {self.extent} must be a multiple of 4 and at least 8")
        if self.samples < 1 or self.test_samples < 0:
            raise ValueError("sample counts must be positive")

    @property
    def latent_dim(self) -> int:
        return self.domains if self.kind == "discrete" else self.style_dim

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SyntheticSample:
    x: torch.Tensor
    y: torch.Tensor
    code: torch.Tensor
    domain: int
    mask: torch.Tensor


@dataclass
class SyntheticDataset:
    """Stacked samples of one split; indexing yields :class:`SyntheticSample`."""

    spec: TaskSpec
    split: Split
    x: torch.Tensor
    y: torch.Tensor
    codes: torch.Tensor
    domains: torch.Tensor
    masks: torch.Tensor

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def __getitem__(self, index: int) -> SyntheticSample:
        return SyntheticSample(
            x=self.x[index],
            y=self.y[index],
            code=self.codes[index],
            domain=int(self.domains[index].item()),
            mask=self.masks[index],
        )

    def __iter__(self) -> Iterator[SyntheticSample]:
        for i in range(len(self)):
            yield self[i]

    def batch(self, indices: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.x[indices], self.y[indices], self.codes[indices]


def hue_of_domain(domain: int, domains: int) -> float:
    return 2.0 * math.pi * domain / domains


def code_hue(code: torch.Tensor, spec: TaskSpec) -> Tuple[float, float]:
    """(hue, brightness offset) selected by ``code``."""
    if spec.kind == "discrete":
        return hue_of_domain(int(torch.argmax(code).item()), spec.domains), 0.0
    return math.pi * float(code[0].item()), BRIGHTNESS_SCALE * float(code[1].item())


def apply_hue(x: torch.Tensor, mask: torch.Tensor, code: torch.Tensor, spec: TaskSpec) -> torch.Tensor:
    """Analytic target for gray input ``x`` (3, E, E) with coverage ``mask`` (E, E)."""
    if x.dim() != 3 or mask.shape != x.shape[-2:]:
        raise ShapeMismatchError(
            f"apply_hue expects x (3, E, E) and mask (E, E), got {tuple(x.shape)} and {tuple(mask.shape)}"
        )
    hue, brightness = code_hue(code, spec)
    shift = HUE_SATURATION * torch.cos(hue - _CHANNEL_ANGLES).to(x.dtype) + brightness
    return x + mask.unsqueeze(0) * shift.view(3, 1, 1)


def _coverage(spec: TaskSpec, rng: PRNGState) -> torch.Tensor:
    e = spec.extent
    fine = (torch.arange(e * SUPERSAMPLE, dtype=torch.float64) + 0.5) / SUPERSAMPLE
    rows, cols = torch.meshgrid(fine, fine, indexing="ij")
    shape_kind, a, b, c = rng.uniform((4,)).tolist()
    if shape_kind < 0.5:
        side = e / 4 + a * (e / 4)
        half = side / 2
        cy = half + b * (e - side)
        cx = half + c * (e - side)
        inside = ((rows - cy).abs() <= half) & ((cols - cx).abs() <= half)
    else:
        radius = e / 8 + a * (e / 8)
        cy = radius + b * (e - 2 * radius)
        cx = radius + c * (e - 2 * radius)
        inside = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2
    coverage = F.avg_pool2d(inside.to(torch.float64)[None, None], SUPERSAMPLE)
    return coverage[0, 0]


def render_sample(spec: TaskSpec, index: int) -> SyntheticSample:
    """Deterministic sample ``index``; train uses [0, samples), test continues after."""
    rng = PRNGState(seed=spec.seed).child(index)
    mask = _coverage(spec, rng)
    luma = float(rng.uniform((1,), -FOREGROUND_LUMA, FOREGROUND_LUMA).item())
    gray = BACKGROUND_LEVEL + mask * (luma - BACKGROUND_LEVEL)
    x = gray.unsqueeze(0).expand(3, -1, -1).clone()
    if spec.kind == "discrete":
        domain = index % spec.domains
        code = torch.zeros(spec.domains, dtype=torch.float64)
        code[domain] = 1.0
    else:
        domain = ABSTAIN
        code = rng.uniform((spec.style_dim,), -1.0, 1.0)
    y = apply_hue(x, mask, code, spec)
    return SyntheticSample(x=x, y=y, code=code, domain=domain, mask=mask)


def gen_dataset(spec: TaskSpec, split: Split = "train", dtype: torch.dtype = torch.float32) -> SyntheticDataset:
    if split == "train":
        indices = range(spec.samples)
    elif split == "test":
        indices = range(spec.samples, spec.samples + spec.test_samples)
    else:
        raise ValueError(f"Unknown split '{split}'. Available: train, test")
    samples = [render_sample(spec, i) for i in indices]
    if not samples:
        raise ValueError(f"split '{split}' is empty for this task")
    return SyntheticDataset(
        spec=spec,
        split=split,
        x=torch.stack([s.x for s in samples]).to(dtype),
        y=torch.stack([s.y for s in samples]).to(dtype),
        codes=torch.stack([s.code for s in samples]).to(dtype),
        domains=torch.tensor([s.domain for s in samples], dtype=torch.long),
        masks=torch.stack([s.mask for s in samples]).to(dtype),
    )


def domain_codes(spec: TaskSpec, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """One-hot code of every domain, shape (K, K)."""
    return torch.eye(spec.domains, dtype=dtype)


def hue_angle(image: torch.Tensor) -> Optional[float]:
    """Mean foreground hue angle of an image, or None if it has no chroma."""
    chroma = image.to(torch.float64) - image.to(torch.float64).mean(dim=0, keepdim=True)
    a = (chroma * torch.cos(_CHANNEL_ANGLES).view(3, 1, 1)).sum(dim=0)
    b = (chroma * torch.sin(_CHANNEL_ANGLES).view(3, 1, 1)).sum(dim=0)
    magnitude = torch.sqrt(a**2 + b**2)
    peak = float(magnitude.max().item())
    if peak < CHROMA_FLOOR:
        return None
    foreground = magnitude >= FOREGROUND_FRACTION * peak
    return math.atan2(float(b[foreground].mean().item()), float(a[foreground].mean().item()))


def hue_oracle(image: torch.Tensor, domains: int = DESK_DOMAINS) -> int:
    """Domain whose hue is circularly nearest to the image's foreground hue."""
    angle = hue_angle(image)
    if angle is None:
        return ABSTAIN
    best, best_distance = ABSTAIN, math.inf
    for k in range(domains):
        delta = (angle - hue_of_domain(k, domains) + math.pi) % (2.0 * math.pi) - math.pi
        if abs(delta) < best_distance:
            best, best_distance = k, abs(delta)
    return best


def estimate_coverage(x: torch.Tensor) -> torch.Tensor:
    """Coverage recovered from a gray input, exact when some pixel is fully covered."""
    gray = x[0] - BACKGROUND_LEVEL
    return gray / gray.max().clamp_min(1e-12)


class AnalyticTranslator:
    """The ground-truth mapping packaged as a forward map ``phi(x, c)``."""

    def __init__(self, spec: TaskSpec) -> None:
        self.spec = spec

    def __call__(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        codes = c.unsqueeze(0).expand(x.shape[0], -1) if c.dim() == 1 else c
        return torch.stack(
            [apply_hue(xi, estimate_coverage(xi), ci, self.spec) for xi, ci in zip(x, codes)]
        )


def per_domain_targets(dataset: SyntheticDataset) -> torch.Tensor:
    """Targets of every sample under every domain, shape (K, N, 3, E, E)."""
    spec = dataset.spec
    codes = domain_codes(spec, torch.float64)
    return torch.stack(
        [
            torch.stack([apply_hue(s.x, s.mask, code, spec) for s in dataset])
            for code in codes
        ]
    )


def collapse_lower_bound(dataset: SyntheticDataset) -> float:
    """Best mean L1 achievable by an output that ignores the code.

    Domains are drawn uniformly, so the per-pixel median over all domain targets
    minimizes the expected L1 error against the sample's own target.
    """
    if dataset.spec.kind != "discrete":
        raise ValueError("collapse bound is defined for discrete-domain tasks")
    targets = per_domain_targets(dataset)
    median = targets.median(dim=0).values
    return float((targets - median.unsqueeze(0)).abs().mean().item())


def save_dataset(dataset: SyntheticDataset, directory: Union[str, Path]) -> Path:
    return save_bundle(
        directory,
        {
            "x": dataset.x,
            "y": dataset.y,
            "codes": dataset.codes,
            "domains": dataset.domains.to(torch.float64),
            "masks": dataset.masks,
        },
        {"kind": "dataset", "split": dataset.split, "task": dataset.spec.to_dict()},
    )


def load_dataset(directory: Union[str, Path]) -> SyntheticDataset:
    manifest, tensors = load_bundle(directory)
    if manifest.get("kind") != "dataset":
        raise ValueError(f"{directory} is not a dataset bundle")
    return SyntheticDataset(
        spec=TaskSpec(**manifest["task"]),
        split=manifest["split"],
        x=tensors["x"],
        y=tensors["y"],
        codes=tensors["codes"],
        domains=tensors["domains"].to(torch.long),
        masks=tensors["masks"],
    )


class StyleEncoder(nn.Module):
    """Three stride-2 conv stages, global average pool, linear head, tanh."""

    def __init__(self, latent_dim: int, width: int = 16, in_channels: int = 3) -> None:
        super().__init__()
        self.latent_dim = latent_dim
        self.stages = nn.ModuleList(
            [
                Conv2d(in_channels, width, 4, 2, 1, "reflection", bias=True),
                Conv2d(width, 2 * width, 4, 2, 1, "reflection", bias=True),
                Conv2d(2 * width, 4 * width, 4, 2, 1, "reflection", bias=True),
            ]
        )
        self.head = nn.Linear(4 * width, latent_dim)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        h = image
        for stage in self.stages:
            h = torch.relu(stage(h))
        return torch.tanh(self.head(h.mean(dim=(2, 3))))


def build_style_encoder(
    latent_dim: int,
    rng: PRNGState,
    width: int = 16,
    std: float = 0.02,
    dtype: torch.dtype = torch.float32,
) -> StyleEncoder:
    encoder = StyleEncoder(latent_dim, width)
    init_gaussian_(encoder, rng, std=std)
    return encoder.to(dtype)


def sample_styles(rng: PRNGState, count: int, spec: TaskSpec, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Random codes of the task's kind: one-hot domains or uniform styles."""
    if spec.kind == "discrete":
        return F.one_hot(rng.randint(spec.domains, (count,)), spec.domains).to(dtype)
    return rng.uniform((count, spec.style_dim), -1.0, 1.0, dtype=dtype)
