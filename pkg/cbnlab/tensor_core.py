"""Dense tensor primitives, seeded randomness and the gradient-check harness.

Tensors are ``torch.Tensor`` objects laid out as (batch, channel, height, width).
Every differentiable op here is recorded on torch's dynamic autograd tape, so a
scalar loss built from them can be differentiated with ``torch.autograd.grad``.
Verification paths run in float64; training may use float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .constants import GRAD_CHECK_EPS, GRAD_CHECK_FLOOR
from .errors import NonScalarLossError, ReflectionPadError, ShapeMismatchError

PaddingMode = Literal["zero", "reflection"]
StatScope = Literal["instance", "batch"]

CHECK_DTYPE = torch.float64
_SEED_MASK = (1 << 63) - 1


@dataclass
class PRNGState:
    """Seeded random stream.

    Draws come from a ``torch.Generator`` seeded with ``seed``; child streams are
    derived through ``numpy.random.SeedSequence`` so that per-index and per-trial
    streams are independent of the order in which they are requested.
    """

    seed: int
    counter: int = 0
    algorithm: str = "seedsequence+mt19937"
    _generator: Optional[torch.Generator] = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> torch.Generator:
        if self._generator is None:
            self._generator = torch.Generator()
            self._generator.manual_seed(self.seed & _SEED_MASK)
        return self._generator

    def child(self, key: int) -> "PRNGState":
        """Independent stream keyed by ``key`` (sample index, trial number...)."""
        seq = np.random.SeedSequence(self.seed & _SEED_MASK, spawn_key=(int(key),))
        derived = int(seq.generate_state(1, dtype=np.uint64)[0]) & _SEED_MASK
        return PRNGState(seed=derived, algorithm=self.algorithm)

    def split(self, n: int) -> list["PRNGState"]:
        return [self.child(i) for i in range(n)]

    def normal(
        self, shape: Sequence[int], std: float = 1.0, dtype: torch.dtype = CHECK_DTYPE
    ) -> torch.Tensor:
        self.counter += 1
        return torch.randn(tuple(shape), generator=self.generator, dtype=dtype) * std

    def uniform(
        self,
        shape: Sequence[int],
        low: float = 0.0,
        high: float = 1.0,
        dtype: torch.dtype = CHECK_DTYPE,
    ) -> torch.Tensor:
        self.counter += 1
        u = torch.rand(tuple(shape), generator=self.generator, dtype=dtype)
        return low + (high - low) * u

    def randint(self, high: int, shape: Sequence[int] = ()) -> torch.Tensor:
        self.counter += 1
        return torch.randint(high, tuple(shape), generator=self.generator)

    def randperm(self, n: int) -> torch.Tensor:
        self.counter += 1
        return torch.randperm(n, generator=self.generator)


@dataclass
class KernelBank:
    """Convolution kernels ``weight[R, Q, K, L]`` with optional per-output bias."""

    weight: torch.Tensor
    bias: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        if self.weight.dim() != 4:
            raise ShapeMismatchError(
                f"kernel bank needs a 4-D weight (R, Q, K, L), got {tuple(self.weight.shape)}"
            )
        if self.bias is not None and self.bias.numel() != self.weight.shape[0]:
            raise ShapeMismatchError(
                f"bias length {self.bias.numel()} != out channels {self.weight.shape[0]}"
            )

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[1])

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return int(self.weight.shape[2]), int(self.weight.shape[3])

    @classmethod
    def random(
        cls,
        out_channels: int,
        in_channels: int,
        kernel: int,
        rng: PRNGState,
        std: float = 1.0,
        bias: bool = False,
        dtype: torch.dtype = CHECK_DTYPE,
    ) -> "KernelBank":
        weight = rng.normal((out_channels, in_channels, kernel, kernel), std=std, dtype=dtype)
        b = rng.normal((out_channels,), std=std, dtype=dtype) if bias else None
        return cls(weight=weight, bias=b)


def pad2d(t: torch.Tensor, pad_amount: int, padding: PaddingMode = "zero") -> torch.Tensor:
    """Pad the two spatial axes of a 4-D tensor."""
    if pad_amount == 0:
        return t
    if pad_amount < 0:
        raise ShapeMismatchError(f"pad_amount must be nonnegative, got {pad_amount}")
    m, n = t.shape[-2], t.shape[-1]
    if padding == "reflection":
        if pad_amount >= m or pad_amount >= n:
            raise ReflectionPadError(
                f"reflection pad {pad_amount} needs a plane larger than {m}x{n}"
            )
        return F.pad(t, (pad_amount,) * 4, mode="reflect")
    if padding == "zero":
        return F.pad(t, (pad_amount,) * 4, mode="constant", value=0.0)
    raise ValueError(f"Unknown padding mode '{padding}'. Available: zero, reflection")


def conv2d(
    input: torch.Tensor,
    kernels: KernelBank,
    stride: int = 1,
    padding: PaddingMode = "zero",
    pad_amount: int = 0,
) -> torch.Tensor:
    """Cross-correlate ``input[B, Q, M, N]`` with ``kernels`` to ``[B, R, M', N']``.

    M' = (M + 2 * pad_amount - K) / stride + 1 and the division must be exact.
    """
    if input.dim() != 4:
        raise ShapeMismatchError(f"conv2d expects [B, Q, M, N], got {tuple(input.shape)}")
    if stride < 1:
        raise ShapeMismatchError(f"stride must be positive, got {stride}")
    if input.shape[1] != kernels.in_channels:
        raise ShapeMismatchError(
            f"input has {input.shape[1]} channels, kernels expect {kernels.in_channels}"
        )
    k, l = kernels.kernel_size
    m, n = input.shape[-2] + 2 * pad_amount, input.shape[-1] + 2 * pad_amount
    if k > m or l > n:
        raise ShapeMismatchError(f"kernel {k}x{l} does not fit padded input {m}x{n}")
    if (m - k) % stride or (n - l) % stride:
        raise ShapeMismatchError(
            f"stride {stride} does not divide padded extent {m}x{n} minus kernel {k}x{l}"
        )
    padded = pad2d(input, pad_amount, padding)
    return F.conv2d(padded, kernels.weight, kernels.bias, stride=stride)


def transposed_conv2d(
    input: torch.Tensor,
    kernels: KernelBank,
    stride: int = 1,
    pad_amount: int = 0,
) -> torch.Tensor:
    """Adjoint of :func:`conv2d` (zero padding) with the same kernel bank.

    ``input`` carries R channels and the result Q channels, with spatial extent
    (M - 1) * stride - 2 * pad_amount + K.  ``kernels.bias`` (length Q here) is added
    after the adjoint map when present.
    """
    if input.dim() != 4:
        raise ShapeMismatchError(
            f"transposed_conv2d expects [B, R, M, N], got {tuple(input.shape)}"
        )
    if input.shape[1] != kernels.out_channels:
        raise ShapeMismatchError(
            f"input has {input.shape[1]} channels, kernels emit {kernels.out_channels}"
        )
    k, _ = kernels.kernel_size
    out_m = (input.shape[-2] - 1) * stride - 2 * pad_amount + k
    if out_m < 1:
        raise ShapeMismatchError(f"transposed geometry yields empty output ({out_m})")
    bias = kernels.bias
    out = F.conv_transpose2d(input, kernels.weight, None, stride=stride, padding=pad_amount)
    if bias is not None:
        if bias.numel() != kernels.in_channels:
            raise ShapeMismatchError(
                f"transposed bias length {bias.numel()} != {kernels.in_channels}"
            )
        out = out + bias.view(1, -1, 1, 1)
    return out


def channel_stats(
    t: torch.Tensor, scope: StatScope = "instance", keepdim: bool = False
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean and population std.

    ``instance`` reduces over (M, N) per (sample, channel); ``batch`` reduces over
    (B, M, N) per channel.
    """
    if t.numel() == 0:
        raise ShapeMismatchError("channel_stats needs a nonempty tensor")
    if scope == "instance":
        dims: Tuple[int, ...] = (2, 3)
    elif scope == "batch":
        dims = (0, 2, 3)
    else:
        raise ValueError(f"Unknown stat scope '{scope}'. Available: instance, batch")
    mean = t.mean(dim=dims, keepdim=True)
    var = ((t - mean) ** 2).mean(dim=dims, keepdim=True)
    std = torch.sqrt(var)
    if not keepdim:
        mean = mean.squeeze(dim=dims)
        std = std.squeeze(dim=dims)
        if scope == "batch":
            mean, std = mean.reshape(-1), std.reshape(-1)
    return mean, std


Computation = Callable[[Dict[str, torch.Tensor]], torch.Tensor]


def grad_check(
    computation: Computation,
    params: Mapping[str, torch.Tensor],
    eps: float = GRAD_CHECK_EPS,
    floor: float = GRAD_CHECK_FLOOR,
) -> float:
    """Compare reverse-mode gradients with central finite differences.

    The error is taken per coordinate, ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``,
    and the function returns the maximum over every coordinate of every parameter.
    ``floor`` keeps near-zero coordinates from turning rounding noise into a
    relative error.  Parameters are promoted to float64.
    """
    leaves = {
        name: value.detach().to(CHECK_DTYPE).clone().requires_grad_(True)
        for name, value in params.items()
    }
    loss = computation(leaves)
    if loss.numel() != 1:
        raise NonScalarLossError(
            f"grad_check needs a scalar loss, got shape {tuple(loss.shape)}"
        )
    names = list(leaves)
    analytic = torch.autograd.grad(loss.reshape(()), [leaves[n] for n in names], allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for name, tape_grad in zip(names, analytic):
            leaf = leaves[name]
            if tape_grad is None:
                tape_grad = torch.zeros_like(leaf)
            numeric = torch.zeros_like(leaf)
            flat = leaf.view(-1)
            numeric_flat = numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                plus = computation(leaves).item()
                flat[i] = original - eps
                minus = computation(leaves).item()
                flat[i] = original
                numeric_flat[i] = (plus - minus) / (2.0 * eps)
            if leaf.numel() == 0:
                continue
            scale = torch.clamp(torch.maximum(tape_grad.abs(), numeric.abs()), min=floor)
            err = ((tape_grad - numeric).abs() / scale).max().item()
            worst = max(worst, err)
    return worst
