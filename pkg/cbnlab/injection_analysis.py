"""Latent code injection analysis.

Covers the convolution decomposition ``z = y + o`` of a latent-injected
convolution, executable versions of the batch-norm inconsistency and
instance-norm elimination arguments, the consistency/diversity criterion
checker, and the feature-statistics probe (PCA + k-means over interior
channel means).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA

from .constants import (
    CONSISTENCY_THRESHOLD,
    DIVERSITY_THRESHOLD,
    KMEANS_MAX_ITER,
    MIN_IDENTITY_STD,
    PROBE_VARIANCE,
)
from .errors import DegenerateBatchError, InsufficientSamplesError, ShapeMismatchError
from .layers import NormLayer, batch_norm
from .tensor_core import CHECK_DTYPE, KernelBank, PaddingMode, PRNGState, channel_stats, conv2d

logger = logging.getLogger(__name__)

CodeKind = Literal["one_hot", "continuous"]
ForwardMap = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]

_MAX_REDRAWS = 50


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Length-S code selecting the target mapping."""

    values: torch.Tensor
    kind: CodeKind = "continuous"

    def __post_init__(self) -> None:
        if self.values.dim() != 1:
            raise ShapeMismatchError(f"latent code must be 1-D, got {tuple(self.values.shape)}")
        if self.kind == "one_hot":
            ones = int((self.values == 1).sum().item())
            zeros = int((self.values == 0).sum().item())
            if ones != 1 or ones + zeros != self.values.numel():
                raise ValueError("one-hot code needs exactly one 1 and zeros elsewhere")
        elif self.kind != "continuous":
            raise ValueError(f"Unknown code kind '{self.kind}'. Available: one_hot, continuous")

    @property
    def dim(self) -> int:
        return int(self.values.numel())

    @classmethod
    def one_hot(cls, index: int, size: int, dtype: torch.dtype = CHECK_DTYPE) -> "LatentCode":
        if not 0 <= index < size:
            raise ValueError(f"domain index {index} outside [0, {size})")
        values = torch.zeros(size, dtype=dtype)
        values[index] = 1.0
        return cls(values, "one_hot")


def _code_values(c: Union[LatentCode, torch.Tensor]) -> torch.Tensor:
    return c.values if isinstance(c, LatentCode) else c


def replicate_latent(c: Union[LatentCode, torch.Tensor], m: int, n: int) -> torch.Tensor:
    """Spread each code entry over a constant M x N plane.

    A (S,) code gives (S, M, N); a batch of codes (B, S) gives (B, S, M, N).
    """
    if m < 1 or n < 1:
        raise ValueError(f"plane extent must be positive, got {m}x{n}")
    values = _code_values(c)
    return values[..., None, None].expand(*values.shape, m, n)


@dataclass
class DecompositionReport:
    y: torch.Tensor
    o: torch.Tensor
    z: torch.Tensor
    residual: float
    full_spread: torch.Tensor
    interior_spread: torch.Tensor
    ring: int

    @property
    def max_full_spread(self) -> float:
        return float(self.full_spread.max().item())

    @property
    def max_interior_spread(self) -> float:
        return float(self.interior_spread.max().item()) if self.interior_spread.numel() else 0.0


def _plane_spread(t: torch.Tensor) -> torch.Tensor:
    if t.shape[-1] == 0 or t.shape[-2] == 0:
        return torch.zeros(t.shape[1], dtype=t.dtype)
    return (t.amax(dim=(2, 3)) - t.amin(dim=(2, 3))).amax(dim=0)


def lci_conv(
    x: torch.Tensor,
    c: Union[LatentCode, torch.Tensor],
    w: KernelBank,
    v: KernelBank,
    padding: PaddingMode = "zero",
    pad_amount: int = 0,
) -> DecompositionReport:
    """Convolve ``(x; replicated c)`` jointly and as ``y = W*x`` plus ``o = V*c``."""
    if x.dim() != 4:
        raise ShapeMismatchError(f"lci_conv expects x as [B, Q, M, N], got {tuple(x.shape)}")
    if w.out_channels != v.out_channels:
        raise ShapeMismatchError(
            f"W emits {w.out_channels} channels but V emits {v.out_channels}"
        )
    if w.kernel_size != v.kernel_size:
        raise ShapeMismatchError("W and V must share one kernel size")
    values = _code_values(c).to(x.dtype)
    if values.shape[-1] != v.in_channels:
        raise ShapeMismatchError(
            f"code has {values.shape[-1]} entries, V expects {v.in_channels} latent channels"
        )
    if values.dim() == 1:
        values = values.unsqueeze(0).expand(x.shape[0], -1)
    planes = replicate_latent(values, x.shape[-2], x.shape[-1])

    joint = KernelBank(torch.cat([w.weight, v.weight], dim=1), w.bias)
    z = conv2d(torch.cat([x, planes], dim=1), joint, 1, padding, pad_amount)
    y = conv2d(x, w, 1, padding, pad_amount)
    o = conv2d(planes, KernelBank(v.weight), 1, padding, pad_amount)

    ring = pad_amount
    interior = o[..., ring : o.shape[-2] - ring, ring : o.shape[-1] - ring]
    return DecompositionReport(
        y=y,
        o=o,
        z=z,
        residual=float((z - (y + o)).abs().max().item()),
        full_spread=_plane_spread(o),
        interior_spread=_plane_spread(interior),
        ring=ring,
    )


@dataclass(frozen=True)
class _DemoGeometry:
    in_channels: int = 2
    latent_dim: int = 2
    out_channels: int = 3
    extent: int = 6
    kernel: int = 3
    pad: int = 1
    padding: PaddingMode = "reflection"


def _draw_layer(rng: PRNGState, geo: _DemoGeometry) -> Tuple[KernelBank, KernelBank]:
    w = KernelBank.random(geo.out_channels, geo.in_channels, geo.kernel, rng)
    v = KernelBank.random(geo.out_channels, geo.latent_dim, geo.kernel, rng)
    return w, v


def _check_batch(z: torch.Tensor) -> None:
    _, std = channel_stats(z, "batch")
    if float(std.min().item()) < MIN_IDENTITY_STD:
        raise DegenerateBatchError(
            f"batch std {float(std.min().item()):.3g} below {MIN_IDENTITY_STD}"
        )


def _with_redraws(rng: PRNGState, draw: Callable[[PRNGState], Any]) -> Any:
    for attempt in range(_MAX_REDRAWS):
        try:
            return draw(rng.child(attempt))
        except DegenerateBatchError as exc:
            logger.debug("Rejected degenerate batch (attempt %d): %s", attempt, exc)
    raise DegenerateBatchError(f"no usable batch after {_MAX_REDRAWS} redraws")


@dataclass
class IntraBatchResult:
    worst_spread: float
    formula_gap: float
    trials: int


def demo_intra_batch_inconsistency(
    rng: PRNGState,
    trials: int = 100,
    identical_inputs: bool = False,
    eps: float = 0.0,
) -> IntraBatchResult:
    """Batches of three inputs sharing one code, pushed through LCI conv and BN.

    ``worst_spread`` is the largest per-instance post-BN channel-mean spread seen.
    ``formula_gap`` compares every spread with ``(E[y_i] - E[y_j]) / std(Z)``.
    """
    geo = _DemoGeometry()
    worst = 0.0
    formula_gap = 0.0

    def draw(stream: PRNGState) -> Tuple[float, float]:
        w, v = _draw_layer(stream, geo)
        shape = (1 if identical_inputs else 3, geo.in_channels, geo.extent, geo.extent)
        x = stream.normal(shape).expand(3, -1, -1, -1)
        code = stream.normal((geo.latent_dim,))
        report = lci_conv(x, code, w, v, geo.padding, geo.pad)
        _check_batch(report.z)
        layer = NormLayer("bn", geo.out_channels, eps=eps).to(CHECK_DTYPE)
        means = batch_norm(report.z, layer, "train").mean(dim=(2, 3))
        spread = (means.amax(dim=0) - means.amin(dim=0)).max().item()

        y_means = report.y.mean(dim=(2, 3))
        _, z_std = channel_stats(report.z, "batch")
        oracle = (y_means - y_means.mean(dim=0, keepdim=True)) / z_std
        gap = (means.detach() - oracle).abs().max().item()
        return float(spread), float(gap)

    for t in range(trials):
        spread, gap = _with_redraws(rng.child(t), draw)
        worst = max(worst, spread)
        formula_gap = max(formula_gap, gap)
    return IntraBatchResult(worst_spread=worst, formula_gap=formula_gap, trials=trials)


@dataclass
class InterBatchTrial:
    lhs: torch.Tensor
    rhs: torch.Tensor
    same_mapping_mean: float

    @property
    def gap(self) -> float:
        return float((self.lhs - self.rhs).abs().max().item())


def demo_inter_batch_identity(rng: PRNGState, trials: int = 100) -> List[InterBatchTrial]:
    """Swap one same-code instance for a different-code one and compare batches.

    Batch one holds ``z1, z2, z3`` all under code ``c1``; batch two holds ``z1, z2``
    and ``z4 = y3 + o2``.  Normalization is exact (epsilon 0).
    """
    geo = _DemoGeometry()
    results: List[InterBatchTrial] = []

    def draw(stream: PRNGState) -> InterBatchTrial:
        w, v = _draw_layer(stream, geo)
        x = stream.normal((3, geo.in_channels, geo.extent, geo.extent))
        c1 = stream.normal((geo.latent_dim,))
        c2 = stream.normal((geo.latent_dim,))
        same = lci_conv(x, c1, w, v, geo.padding, geo.pad)
        swapped = lci_conv(x[2:3], c2, w, v, geo.padding, geo.pad)
        first = same.z
        second = torch.cat([same.z[:2], swapped.z], dim=0)
        _check_batch(first)
        _check_batch(second)

        layer = NormLayer("bn", geo.out_channels, eps=0.0).to(CHECK_DTYPE)
        first_means = batch_norm(first, layer, "train").mean(dim=(2, 3))
        second_means = batch_norm(second, layer, "train").mean(dim=(2, 3))
        return InterBatchTrial(
            lhs=second_means[:2].mean(dim=0).detach(),
            rhs=(-0.5 * second_means[2]).detach(),
            same_mapping_mean=float(first_means.mean(dim=0).abs().max().item()),
        )

    for t in range(trials):
        results.append(_with_redraws(rng.child(t), draw))
    return results


@torch.no_grad()
def demo_in_elimination(
    subject: ForwardMap,
    x: torch.Tensor,
    c_pairs: Sequence[Tuple[torch.Tensor, torch.Tensor]],
) -> float:
    """Largest absolute output difference between the two codes of each pair."""
    gap = 0.0
    for c1, c2 in c_pairs:
        diff = (subject(x, _code_values(c1)) - subject(x, _code_values(c2))).abs().max()
        gap = max(gap, float(diff.item()))
    return gap


@dataclass
class CriterionReport:
    consistency_gap: float
    diversity_gap: float
    consistency_threshold: float = CONSISTENCY_THRESHOLD
    diversity_threshold: float = DIVERSITY_THRESHOLD

    @property
    def consistency_pass(self) -> bool:
        return self.consistency_gap < self.consistency_threshold

    @property
    def diversity_pass(self) -> bool:
        return self.diversity_gap > self.diversity_threshold

    def to_dict(self) -> dict:
        return {
            "consistency_gap": self.consistency_gap,
            "consistency_threshold": self.consistency_threshold,
            "consistency_pass": self.consistency_pass,
            "diversity_gap": self.diversity_gap,
            "diversity_threshold": self.diversity_threshold,
            "diversity_pass": self.diversity_pass,
        }


def feature_map(generator: Any, layer: Optional[int] = None) -> ForwardMap:
    """Forward map returning the post-normalization features of one unit.

    Defaults to the last unit of the encoder (down + residual stages).
    """
    index = generator.encoder_unit_count() - 1 if layer is None else layer

    def phi(x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        _, features = generator.forward_with_features(x, c)
        return features[index]

    return phi


def check_criteria(
    phi: ForwardMap,
    inputs: torch.Tensor,
    codes: Sequence[torch.Tensor],
    consistency_threshold: float = CONSISTENCY_THRESHOLD,
    diversity_threshold: float = DIVERSITY_THRESHOLD,
) -> CriterionReport:
    """Evaluate the consistency-within-diversity criteria on feature means.

    ``inputs`` is forwarded as one batch under each code so batch statistics see
    the whole set.
    """
    if inputs.shape[0] < 2 or len(codes) < 2:
        raise InsufficientSamplesError("check_criteria needs at least two inputs and two codes")
    with torch.no_grad():
        means = torch.stack([phi(inputs, _code_values(c)).mean(dim=(2, 3)) for c in codes])
    # means: [codes, inputs, channels]
    consistency = (means.amax(dim=1) - means.amin(dim=1)).max().item()
    diversity = float("inf")
    for i in range(len(codes)):
        for j in range(i + 1, len(codes)):
            pair_gap = (means[i] - means[j]).abs().amax(dim=1).min().item()
            diversity = min(diversity, pair_gap)
    return CriterionReport(
        consistency_gap=float(consistency),
        diversity_gap=float(diversity),
        consistency_threshold=consistency_threshold,
        diversity_threshold=diversity_threshold,
    )


@dataclass
class ProbeResult:
    assignments: np.ndarray
    labels: np.ndarray
    purity: float
    n_components: int
    layer: int
    ring: int
    features: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "purity": self.purity,
            "n_components": self.n_components,
            "layer": self.layer,
            "ring": self.ring,
            "clusters": int(len(np.unique(self.assignments))),
            "samples": int(len(self.assignments)),
        }


def cluster_purity(assignments: np.ndarray, labels: np.ndarray) -> float:
    total = 0
    for cluster in np.unique(assignments):
        members = labels[assignments == cluster]
        total += int(np.bincount(members).max())
    return total / len(labels)


def interior_channel_means(features: torch.Tensor, ring: int) -> torch.Tensor:
    """Per-channel means over the region left after dropping a border ring."""
    m, n = features.shape[-2], features.shape[-1]
    ring = min(ring, (m - 1) // 2, (n - 1) // 2)
    return features[..., ring : m - ring, ring : n - ring].mean(dim=(2, 3))


def feature_stat_probe(
    generator: Any,
    samples: torch.Tensor,
    codes: torch.Tensor,
    k: int,
    layer: Optional[int] = None,
    seed: int = 0,
    variance: float = PROBE_VARIANCE,
    batch_size: int = 64,
) -> ProbeResult:
    """Cluster interior feature means and score the clusters against the codes.

    ``samples[i]`` is translated under ``codes[i]``; rows of ``codes`` that are
    equal share a label.
    """
    n = samples.shape[0]
    if n < k:
        raise InsufficientSamplesError(f"probe needs at least k={k} samples, got {n}")
    _, labels_t = torch.unique(codes, dim=0, return_inverse=True)
    labels = labels_t.cpu().numpy().astype(np.int64)
    if k < len(np.unique(labels)):
        raise ValueError(f"k={k} is smaller than the {len(np.unique(labels))} distinct codes")

    index = generator.encoder_unit_count() - 1 if layer is None else layer
    ring = generator.boundary_rings()[index]
    was_training = generator.training
    generator.eval()
    rows = []
    try:
        with torch.no_grad():
            for start in range(0, n, batch_size):
                x = samples[start : start + batch_size]
                c = codes[start : start + batch_size]
                _, features = generator.forward_with_features(x, c)
                rows.append(interior_channel_means(features[index], ring))
                extent = features[index].shape[-2]
    finally:
        generator.train(was_training)
    matrix = torch.cat(rows).to(torch.float64).cpu().numpy()

    centered = matrix - matrix.mean(axis=0, keepdims=True)
    if float((centered**2).sum()) < 1e-18:
        reduced = np.zeros((n, 1))
        components = 1
    else:
        pca = PCA(n_components=variance, svd_solver="full")
        reduced = pca.fit_transform(matrix)
        components = int(pca.n_components_)

    kmeans = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=KMEANS_MAX_ITER,
        random_state=seed,
    )
    assignments = kmeans.fit_predict(reduced)
    return ProbeResult(
        assignments=assignments,
        labels=labels,
        purity=cluster_purity(assignments, labels),
        n_components=components,
        layer=index,
        ring=min(ring, (extent - 1) // 2),
        features=matrix,
    )
