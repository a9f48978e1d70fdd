"""Diversity, consistency and domain-accuracy scoring.

Perceptual distance uses a fixed, seeded random conv stack in place of a
pretrained feature extractor: five stages, each a 3x3 conv + ReLU, with 2x2
average pooling in front of stages two to five.  The distance between two
images is ``5 - sum of per-stage cosine similarities`` of the spatially
averaged stage features.
"""

from __future__ import annotations

import csv
import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Union

import torch
import torch.nn.functional as F
from torch import nn

from .constants import DIVERSITY_PAIRS, SURROGATE_SEED, SURROGATE_WIDTHS
from .errors import ShapeMismatchError, ZeroFeatureError
from .synth_tasks import (
    ABSTAIN,
    AnalyticTranslator,
    StyleEncoder,
    SyntheticDataset,
    TaskSpec,
    domain_codes,
    hue_oracle,
)
from .tensor_core import CHECK_DTYPE, KernelBank, PRNGState, conv2d

ForwardMap = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


class SurrogateNet(nn.Module):
    """Frozen random feature extractor; weights are buffers, never parameters."""

    def __init__(self, seed: int = SURROGATE_SEED, widths: Sequence[int] = SURROGATE_WIDTHS, in_channels: int = 3) -> None:
        super().__init__()
        self.seed = seed
        self.widths = tuple(widths)
        rng = PRNGState(seed=seed)
        previous = in_channels
        for index, width in enumerate(self.widths):
            std = math.sqrt(2.0 / (9 * previous))
            self.register_buffer(f"stage{index}", rng.normal((width, previous, 3, 3), std=std))
            previous = width

    def stage_weights(self) -> List[torch.Tensor]:
        return [getattr(self, f"stage{i}") for i in range(len(self.widths))]

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        h = image.to(CHECK_DTYPE)
        if h.dim() == 3:
            h = h.unsqueeze(0)
        features = []
        for index, weight in enumerate(self.stage_weights()):
            if index and min(h.shape[-2:]) >= 2:
                h = F.avg_pool2d(h, 2)
            h = torch.relu(conv2d(h, KernelBank(weight), 1, "zero", 1))
            features.append(h)
        return features


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine similarity; rows that are both zero and equal count as 1."""
    na = a.norm(dim=1)
    nb = b.norm(dim=1)
    zero = (na == 0) | (nb == 0)
    if bool(zero.any()):
        same = (a == b).all(dim=1)
        if bool((zero & ~same).any()):
            raise ZeroFeatureError("zero-norm feature vector for two different images")
    safe = torch.where(zero, torch.ones_like(na), na * nb)
    cos = (a * b).sum(dim=1) / safe
    return torch.where(zero, torch.ones_like(cos), cos)


def perceptual_distance(
    a: torch.Tensor, b: torch.Tensor, net: Optional[SurrogateNet] = None
) -> Union[float, torch.Tensor]:
    """``5 - sum_i cos(mean feat_i(a), mean feat_i(b))``; batched inputs give one value per row."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"perceptual_distance: {tuple(a.shape)} vs {tuple(b.shape)}")
    net = net or SurrogateNet()
    batched = a.dim() == 4
    total = None
    for fa, fb in zip(net(a), net(b)):
        cos = _cosine(fa.mean(dim=(2, 3)), fb.mean(dim=(2, 3)))
        total = cos if total is None else total + cos
    distance = float(len(net.widths)) - total  # type: ignore[operator]
    return distance if batched else float(distance[0].item())


@contextmanager
def _eval_mode(*modules: Any) -> Iterator[None]:
    flags = [(m, m.training) for m in modules if isinstance(m, nn.Module)]
    for m, _ in flags:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, flag in flags:
            m.train(flag)


def _dtype_of(phi: Any) -> torch.dtype:
    if isinstance(phi, nn.Module):
        for p in phi.parameters():
            return p.dtype
    return CHECK_DTYPE


def _code_pairs(rng: PRNGState, pairs: int, task: TaskSpec, dtype: torch.dtype, gaussian: bool = False):
    if gaussian:
        return (
            rng.normal((pairs, task.latent_dim), dtype=dtype),
            rng.normal((pairs, task.latent_dim), dtype=dtype),
        )
    if task.kind == "discrete":
        first = rng.randint(task.domains, (pairs,))
        offset = 1 + rng.randint(task.domains - 1, (pairs,))
        second = (first + offset) % task.domains
        eye = domain_codes(task, dtype)
        return eye[first], eye[second]
    return (
        rng.uniform((pairs, task.style_dim), -1.0, 1.0, dtype=dtype),
        rng.uniform((pairs, task.style_dim), -1.0, 1.0, dtype=dtype),
    )


def diversity_score(
    generator: ForwardMap,
    inputs: torch.Tensor,
    rng: PRNGState,
    task: TaskSpec,
    pairs: int = DIVERSITY_PAIRS,
    net: Optional[SurrogateNet] = None,
    batch_size: int = 64,
    gaussian_codes: bool = False,
) -> float:
    """Mean perceptual distance between two translations of one input under two codes.

    Codes follow the task, or are standard Gaussian noise of the task's code
    length with ``gaussian_codes``.
    """
    if pairs < 1:
        raise ValueError(f"pairs must be at least 1, got {pairs}")
    net = net or SurrogateNet()
    dtype = _dtype_of(generator)
    picks = rng.randint(inputs.shape[0], (pairs,))
    c1, c2 = _code_pairs(rng, pairs, task, dtype, gaussian_codes)
    total = 0.0
    with _eval_mode(generator):
        for start in range(0, pairs, batch_size):
            sl = slice(start, start + batch_size)
            x = inputs[picks[sl]].to(dtype)
            d = perceptual_distance(generator(x, c1[sl]), generator(x, c2[sl]), net)
            total += float(d.sum().item())  # type: ignore[union-attr]
    return total / pairs


def reference_diversity(
    dataset: SyntheticDataset,
    rng: PRNGState,
    pairs: int = DIVERSITY_PAIRS,
    net: Optional[SurrogateNet] = None,
) -> float:
    """Diversity of the ground-truth mapping itself (the real-image reference)."""
    return diversity_score(AnalyticTranslator(dataset.spec), dataset.x.to(CHECK_DTYPE), rng, dataset.spec, pairs, net)


def consistency_score(
    generator: ForwardMap,
    encoder: Optional[StyleEncoder],
    x: torch.Tensor,
    y: torch.Tensor,
    codes: Optional[torch.Tensor] = None,
    batch_size: int = 64,
) -> float:
    """``1 - mean |G(Enc(y), x) - y|`` with images mapped to [0, 1]; not clamped."""
    if encoder is None and codes is None:
        raise ValueError("consistency_score needs an encoder or ground-truth codes")
    dtype = _dtype_of(generator)
    error = 0.0
    count = 0
    with _eval_mode(generator, encoder):
        for start in range(0, x.shape[0], batch_size):
            xb = x[start : start + batch_size].to(dtype)
            yb = y[start : start + batch_size].to(dtype)
            cb = encoder(yb) if encoder is not None else codes[start : start + batch_size].to(dtype)  # type: ignore[index]
            regenerated = generator(xb, cb)
            error += float(((regenerated + 1) / 2 - (yb + 1) / 2).abs().sum().item())
            count += yb.numel()
    return 1.0 - error / count


def domain_accuracy(generator: ForwardMap, dataset: SyntheticDataset, batch_size: int = 64) -> float:
    """Fraction of (input, domain) translations the hue oracle assigns to that domain."""
    spec = dataset.spec
    if spec.kind != "discrete":
        raise ValueError("domain_accuracy needs a discrete-domain task")
    dtype = _dtype_of(generator)
    codes = domain_codes(spec, dtype)
    correct = 0
    total = 0
    with _eval_mode(generator):
        for k in range(spec.domains):
            for start in range(0, len(dataset), batch_size):
                x = dataset.x[start : start + batch_size].to(dtype)
                outputs = generator(x, codes[k])
                for image in outputs:
                    predicted = hue_oracle(image, spec.domains)
                    correct += int(predicted != ABSTAIN and predicted == k)
                    total += 1
    return correct / total


@dataclass(frozen=True)
class MetricConfig:
    pairs: int = DIVERSITY_PAIRS
    surrogate_seed: int = SURROGATE_SEED
    eval_samples: int = 0
    probe_k: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class MetricReport:
    diversity: float
    consistency: float
    domain_accuracy: Optional[float]
    reference_diversity: float
    samples: int
    pairs: int
    config: Dict[str, Any] = field(default_factory=dict)
    params: Optional[Dict[str, int]] = None
    criteria: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write_json(self, path: Union[str, Path]) -> Path:
        target = Path(path)
        target.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return target

    def append_csv(self, path: Union[str, Path], step: int = 0) -> Path:
        target = Path(path)
        fields = ["step", "diversity", "consistency", "domain_accuracy", "reference_diversity"]
        new_file = not target.exists()
        with target.open("a", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            if new_file:
                writer.writerow(fields)
            writer.writerow(
                [step, self.diversity, self.consistency, self.domain_accuracy, self.reference_diversity]
            )
        return target


def evaluate(
    generator: ForwardMap,
    dataset: SyntheticDataset,
    config: MetricConfig = MetricConfig(),
    encoder: Optional[StyleEncoder] = None,
    seed: int = 0,
) -> MetricReport:
    """Score a generator on a test split with seeded pair draws."""
    if config.eval_samples and config.eval_samples < len(dataset):
        n = config.eval_samples
        dataset = SyntheticDataset(
            spec=dataset.spec,
            split=dataset.split,
            x=dataset.x[:n],
            y=dataset.y[:n],
            codes=dataset.codes[:n],
            domains=dataset.domains[:n],
            masks=dataset.masks[:n],
        )
    net = SurrogateNet(config.surrogate_seed)
    root = PRNGState(seed=seed)
    diversity = diversity_score(generator, dataset.x, root.child(0), dataset.spec, config.pairs, net)
    reference = reference_diversity(dataset, root.child(1), config.pairs, net)
    consistency = consistency_score(
        generator, encoder, dataset.x, dataset.y, None if encoder is not None else dataset.codes
    )
    accuracy = domain_accuracy(generator, dataset) if dataset.spec.kind == "discrete" else None
    return MetricReport(
        diversity=diversity,
        consistency=consistency,
        domain_accuracy=accuracy,
        reference_diversity=reference,
        samples=len(dataset),
        pairs=config.pairs,
        config=config.to_dict(),
    )
