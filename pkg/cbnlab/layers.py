"""Normalization layers, central biasing normalization and conv blocks.

The functional ops (:func:`batch_norm`, :func:`instance_norm`,
:func:`central_biasing_norm`, ...) hold the math; the ``nn.Module`` classes wrap
them so generators can be assembled and trained with torch's autograd.
"""

from __future__ import annotations

from typing import List, Literal, Optional, Union

import torch
from torch import nn

from .constants import INIT_STD, MOMENTUM, NORM_EPS
from .errors import BatchSizeError, MissingBiasNetError, ShapeMismatchError
from .tensor_core import (
    KernelBank,
    PaddingMode,
    PRNGState,
    channel_stats,
    conv2d,
    transposed_conv2d,
)

NormKind = Literal["bn", "in", "cbbn", "cbin"]
Mode = Literal["train", "eval"]
ActivationKind = Literal["relu", "tanh", "sigmoid"]
BiasConstraint = Literal["tanh", "sigmoid", "none"]

NORM_KINDS = ("bn", "in", "cbbn", "cbin")
CENTRAL_BIASING_KINDS = ("cbbn", "cbin")


class AffineParams(nn.Module):
    """Per-channel scale gamma and shift beta."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def scale_shift(self, t: torch.Tensor) -> torch.Tensor:
        return t * self.gamma.view(1, -1, 1, 1) + self.beta.view(1, -1, 1, 1)


class MovingStats(nn.Module):
    """Running per-channel mean/std: ``stat <- momentum * stat + (1 - momentum) * batch``."""

    def __init__(self, channels: int, momentum: float = MOMENTUM) -> None:
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        self.momentum = momentum
        self.register_buffer("mean", torch.zeros(channels))
        self.register_buffer("std", torch.ones(channels))
        self.register_buffer("count", torch.zeros((), dtype=torch.long))

    @torch.no_grad()
    def update(self, batch_mean: torch.Tensor, batch_std: torch.Tensor) -> None:
        m = self.momentum
        self.mean.mul_(m).add_((1.0 - m) * batch_mean.detach().to(self.mean.dtype))
        self.std.mul_(m).add_((1.0 - m) * batch_std.detach().to(self.std.dtype))
        self.count += 1


class BiasNet(nn.Module):
    """Latent code -> per-channel bias ``b(c) = constraint(F c)``.

    ``F`` is an R x S matrix with no additive term.
    """

    def __init__(
        self,
        latent_dim: int,
        channels: int,
        constraint: BiasConstraint = "tanh",
    ) -> None:
        super().__init__()
        if constraint not in ("tanh", "sigmoid", "none"):
            raise ValueError(f"Unknown bias constraint '{constraint}'")
        self.latent_dim = latent_dim
        self.channels = channels
        self.constraint = constraint
        self.weight = nn.Parameter(torch.zeros(channels, latent_dim))

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return bias_net_forward(self, c)


class NormLayer(nn.Module):
    """A BN, IN, CBBN or CBIN layer.

    BN/IN carry affine params by default; CBBN/CBIN carry a bias network and
    only get gamma/beta when ``affine=True``.  BN and CBBN keep moving stats.
    """

    def __init__(
        self,
        kind: NormKind,
        channels: int,
        latent_dim: int = 0,
        eps: float = NORM_EPS,
        affine: Optional[bool] = None,
        momentum: float = MOMENTUM,
        constraint: BiasConstraint = "tanh",
    ) -> None:
        super().__init__()
        if kind not in NORM_KINDS:
            raise ValueError(f"Unknown norm kind '{kind}'. Available: {', '.join(NORM_KINDS)}")
        self.kind = kind
        self.channels = channels
        self.eps = eps
        if affine is None:
            affine = kind not in CENTRAL_BIASING_KINDS
        self.affine: Optional[AffineParams] = AffineParams(channels) if affine else None
        self.moving: Optional[MovingStats] = (
            MovingStats(channels, momentum) if kind in ("bn", "cbbn") else None
        )
        self.bias_net: Optional[BiasNet] = None
        if kind in CENTRAL_BIASING_KINDS:
            if latent_dim < 1:
                raise MissingBiasNetError(f"{kind} layer needs latent_dim >= 1 for its bias net")
            self.bias_net = BiasNet(latent_dim, channels, constraint)

    @property
    def is_central_biasing(self) -> bool:
        return self.kind in CENTRAL_BIASING_KINDS

    def forward(self, z: torch.Tensor, c: Optional[torch.Tensor] = None) -> torch.Tensor:
        mode: Mode = "train" if self.training else "eval"
        if self.kind == "bn":
            return batch_norm(z, self, mode)
        if self.kind == "in":
            return instance_norm(z, self)
        if c is None:
            raise ShapeMismatchError(f"{self.kind} layer needs a latent code")
        return central_biasing_norm(z, c, self, mode)


def _apply_affine(t: torch.Tensor, layer: NormLayer) -> torch.Tensor:
    if layer.affine is None:
        return t
    return layer.affine.scale_shift(t)


def _view_channels(v: torch.Tensor) -> torch.Tensor:
    return v.view(1, -1, 1, 1)


def batch_norm(z: torch.Tensor, layer: NormLayer, mode: Mode = "train") -> torch.Tensor:
    if layer.kind != "bn":
        raise ValueError(f"batch_norm needs a 'bn' layer, got '{layer.kind}'")
    assert layer.moving is not None
    if mode == "train":
        if z.shape[0] < 2:
            raise BatchSizeError("batch_norm in train mode needs a batch of at least 2")
        mean, std = channel_stats(z, "batch")
        layer.moving.update(mean, std)
    else:
        mean, std = layer.moving.mean.to(z.dtype), layer.moving.std.to(z.dtype)
    out = (z - _view_channels(mean)) / (_view_channels(std) + layer.eps)
    return _apply_affine(out, layer)


def instance_norm(z: torch.Tensor, layer: NormLayer) -> torch.Tensor:
    if layer.kind != "in":
        raise ValueError(f"instance_norm needs an 'in' layer, got '{layer.kind}'")
    mean, std = channel_stats(z, "instance", keepdim=True)
    return _apply_affine((z - mean) / (std + layer.eps), layer)


def _code_tensor(c: Union[torch.Tensor, "object"], dtype: torch.dtype) -> torch.Tensor:
    values = c if isinstance(c, torch.Tensor) else getattr(c, "values", c)
    if not isinstance(values, torch.Tensor):
        values = torch.as_tensor(values)
    return values.to(dtype)


def bias_net_forward(net: BiasNet, c: torch.Tensor) -> torch.Tensor:
    """Per-channel bias for code ``c`` of shape (S,) or (B, S)."""
    code = _code_tensor(c, net.weight.dtype)
    if code.shape[-1] != net.latent_dim:
        raise ShapeMismatchError(
            f"latent code has length {code.shape[-1]}, bias net expects {net.latent_dim}"
        )
    raw = code @ net.weight.t()
    if net.constraint == "tanh":
        return torch.tanh(raw)
    if net.constraint == "sigmoid":
        return torch.sigmoid(raw)
    return raw


def central_biasing_norm(
    y: torch.Tensor,
    c: torch.Tensor,
    layer: NormLayer,
    mode: Mode = "train",
) -> torch.Tensor:
    """Remove each instance's channel mean, rescale, then add ``b(c)``.

    CBIN divides by the instance std, CBBN by the batch std (moving std in eval).
    The spatial mean of every output channel is exactly ``b_r(c)`` (plus beta when
    the optional affine is on).
    """
    if layer.kind not in CENTRAL_BIASING_KINDS:
        raise ValueError(f"central_biasing_norm needs a cbbn/cbin layer, got '{layer.kind}'")
    if layer.bias_net is None:
        raise MissingBiasNetError(f"{layer.kind} layer has no bias net")
    mean, inst_std = channel_stats(y, "instance", keepdim=True)
    if layer.kind == "cbin":
        std = inst_std
    else:
        assert layer.moving is not None
        if mode == "train":
            if y.shape[0] < 2:
                raise BatchSizeError("cbbn in train mode needs a batch of at least 2")
            batch_mean, batch_std = channel_stats(y, "batch")
            layer.moving.update(batch_mean, batch_std)
            std = _view_channels(batch_std)
        else:
            std = _view_channels(layer.moving.std.to(y.dtype))
    normalized = _apply_affine((y - mean) / (std + layer.eps), layer)
    b = bias_net_forward(layer.bias_net, c).to(y.dtype)
    if b.dim() == 1:
        b = b.unsqueeze(0)
    return normalized + b.view(b.shape[0], -1, 1, 1)


def activation(t: torch.Tensor, kind: ActivationKind = "relu") -> torch.Tensor:
    if kind == "relu":
        return torch.relu(t)
    if kind == "tanh":
        return torch.tanh(t)
    if kind == "sigmoid":
        return torch.sigmoid(t)
    raise ValueError(f"Unknown activation '{kind}'. Available: relu, tanh, sigmoid")


def dropout(
    t: torch.Tensor,
    rate: float,
    rng: PRNGState,
    mode: Mode = "train",
) -> torch.Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return t
    keep = rng.uniform(t.shape, dtype=t.dtype) >= rate
    return t * keep.to(t.dtype) / (1.0 - rate)


class Conv2d(nn.Module):
    """Convolution with an explicit padding mode, backed by :func:`conv2d`."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        pad_amount: int = 0,
        padding: PaddingMode = "reflection",
        bias: bool = False,
    ) -> None:
        super().__init__()
        self.stride = stride
        self.pad_amount = pad_amount
        self.padding = padding
        self.weight = nn.Parameter(torch.zeros(out_channels, in_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, KernelBank(self.weight, self.bias), self.stride, self.padding, self.pad_amount)


class TransposedConv2d(nn.Module):
    """Transposed convolution; ``weight`` is stored as (in, out, K, K)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        pad_amount: int = 0,
        bias: bool = False,
    ) -> None:
        super().__init__()
        self.stride = stride
        self.pad_amount = pad_amount
        self.weight = nn.Parameter(torch.zeros(in_channels, out_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return transposed_conv2d(x, KernelBank(self.weight, self.bias), self.stride, self.pad_amount)


class ConvUnit(nn.Module):
    """Convolution -> Norm -> [Dropout] -> Activation.

    ``forward`` returns the activated output; the post-norm feature map is kept in
    ``last_features`` when ``record`` is set.
    """

    def __init__(
        self,
        conv: nn.Module,
        norm: NormLayer,
        act: ActivationKind = "relu",
        dropout_rate: float = 0.0,
        dropout_rng: Optional[PRNGState] = None,
    ) -> None:
        super().__init__()
        self.conv = conv
        self.norm = norm
        self.act = act
        self.dropout_rate = dropout_rate
        self.dropout_rng = dropout_rng or PRNGState(seed=0)
        self.record = False
        self.last_features: Optional[torch.Tensor] = None

    def forward(self, x: torch.Tensor, c: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.norm(self.conv(x), c)
        if self.record:
            self.last_features = h
        if self.dropout_rate > 0.0:
            h = dropout(h, self.dropout_rate, self.dropout_rng, "train" if self.training else "eval")
        return activation(h, self.act)


class ResidualBlock(nn.Module):
    """Two 3x3 conv units with an additive skip: ``x + unit2(unit1(x))``."""

    def __init__(self, first: ConvUnit, second: ConvUnit) -> None:
        super().__init__()
        self.first = first
        self.second = second

    def units(self) -> List[ConvUnit]:
        return [self.first, self.second]

    def forward(self, x: torch.Tensor, c: Optional[torch.Tensor] = None) -> torch.Tensor:
        return x + self.second(self.first(x, c), c)


@torch.no_grad()
def init_gaussian_(module: nn.Module, rng: PRNGState, std: float = INIT_STD, bias_std: Optional[float] = None) -> None:
    """Gaussian conv weights, zero conv biases, Gaussian bias-net weights.

    Parameters are visited in registration order so the draw sequence is fixed.
    """
    for sub in module.modules():
        if isinstance(sub, (Conv2d, TransposedConv2d)):
            sub.weight.copy_(rng.normal(sub.weight.shape, std=std, dtype=sub.weight.dtype))
            if sub.bias is not None:
                sub.bias.zero_()
        elif isinstance(sub, BiasNet):
            s = std if bias_std is None else bias_std
            sub.weight.copy_(rng.normal(sub.weight.shape, std=s, dtype=sub.weight.dtype))
        elif isinstance(sub, nn.Linear):
            sub.weight.copy_(rng.normal(sub.weight.shape, std=std, dtype=sub.weight.dtype))
            if sub.bias is not None:
                sub.bias.zero_()
