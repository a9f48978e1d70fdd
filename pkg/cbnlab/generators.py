"""Central biasing generator (CBG), the LCI baseline, and parameter accounting.

Both variants share one encoder-decoder backbone::

    7x7 s1 p3 conv -> 4x4 s2 p1 conv -> 4x4 s2 p1 conv
    -> N residual blocks (two 3x3 s1 p1 conv units each)
    -> 4x4 s2 p1 transposed conv x2 -> 7x7 s1 p3 transposed conv + tanh

The CBN variant feeds the latent code to a bias net in every down/residual norm
layer; the LCI variant concatenates replicated code channels to the input image
and uses plain BN/IN throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import torch
from torch import nn

from .constants import (
    DESK_DOMAINS,
    DESK_EXTENT,
    DESK_WIDTH,
    INIT_STD,
    NORM_EPS,
    FULL_EXTENT,
    FULL_WIDTH,
    RESIDUAL_BLOCKS,
)
from .errors import InvalidExtentError, ShapeMismatchError
from .injection_analysis import replicate_latent
from .layers import (
    BiasConstraint,
    Conv2d,
    ConvUnit,
    NormKind,
    NormLayer,
    ResidualBlock,
    TransposedConv2d,
    init_gaussian_,
)
from .tensor_core import PaddingMode, PRNGState

InjectionKind = Literal["cbn", "lci"]
BaseNorm = Literal["bn", "in"]
Stage = Literal["down", "residual", "up", "out"]


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 3
    base_width: int = DESK_WIDTH
    extent: int = DESK_EXTENT
    latent_dim: int = DESK_DOMAINS
    injection: InjectionKind = "cbn"
    norm: BaseNorm = "in"
    up_norm: BaseNorm = "in"
    padding: PaddingMode = "reflection"
    residual_blocks: int = RESIDUAL_BLOCKS
    dropout: float = 0.0
    bias_constraint: BiasConstraint = "tanh"
    cbn_affine: bool = False
    init_std: float = INIT_STD
    bias_init_std: float = INIT_STD
    eps: float = NORM_EPS

    def __post_init__(self) -> None:
        if self.injection not in ("cbn", "lci"):
            raise ValueError(f"injection must be 'cbn' or 'lci', got '{self.injection}'")
        if self.norm not in ("bn", "in") or self.up_norm not in ("bn", "in"):
            raise ValueError("norm and up_norm must be 'bn' or 'in'")
        if self.padding not in ("zero", "reflection"):
            raise ValueError(f"padding must be 'zero' or 'reflection', got '{self.padding}'")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def down_norm_kind(self) -> NormKind:
        if self.injection == "cbn":
            return "cbin" if self.norm == "in" else "cbbn"
        return self.norm

    @property
    def uses_batch_stats(self) -> bool:
        return self.norm == "bn" or self.up_norm == "bn"

    def validate(self) -> None:
        if self.extent < 8 or self.extent % 4:
            raise InvalidExtentError(
                f"extent {self.extent} must be a multiple of 4 and at least 8"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def full_scale(cls, latent_dim: int, injection: InjectionKind = "cbn", **overrides: Any) -> "GeneratorSpec":
        fields: Dict[str, Any] = dict(
            base_width=FULL_WIDTH,
            extent=FULL_EXTENT,
            latent_dim=latent_dim,
            injection=injection,
        )
        fields.update(overrides)
        return cls(**fields)


@dataclass(frozen=True)
class LayerPlan:
    name: str
    stage: Stage
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    pad: int
    transposed: bool
    norm: Optional[NormKind]
    latent_channels: int = 0


def layer_plan(spec: GeneratorSpec) -> List[LayerPlan]:
    """Layer-by-layer description of the backbone for ``spec``."""
    w = spec.base_width
    s = spec.latent_dim
    down = spec.down_norm_kind
    stem_latent = s if spec.injection == "lci" else 0
    plan = [
        LayerPlan("stem", "down", spec.in_channels, w, 7, 1, 3, False, down, stem_latent),
        LayerPlan("down1", "down", w, 2 * w, 4, 2, 1, False, down),
        LayerPlan("down2", "down", 2 * w, 4 * w, 4, 2, 1, False, down),
    ]
    for i in range(spec.residual_blocks):
        for j in (1, 2):
            plan.append(LayerPlan(f"res{i + 1}.{j}", "residual", 4 * w, 4 * w, 3, 1, 1, False, down))
    plan += [
        LayerPlan("up1", "up", 4 * w, 2 * w, 4, 2, 1, True, spec.up_norm),
        LayerPlan("up2", "up", 2 * w, w, 4, 2, 1, True, spec.up_norm),
        LayerPlan("out", "out", w, spec.in_channels, 7, 1, 3, True, None),
    ]
    return plan


def output_shapes(spec: GeneratorSpec) -> List[Tuple[str, Tuple[int, int, int]]]:
    """(channels, H, W) after each planned layer."""
    spec.validate()
    extent = spec.extent
    shapes = []
    for layer in layer_plan(spec):
        if layer.transposed:
            extent = (extent - 1) * layer.stride - 2 * layer.pad + layer.kernel
        else:
            extent = (extent + 2 * layer.pad - layer.kernel) // layer.stride + 1
        shapes.append((layer.name, (layer.out_channels, extent, extent)))
    return shapes


@dataclass
class LayerParams:
    name: str
    conv_weights: int
    injection_params: int


@dataclass
class ParamCount:
    layers: List[LayerParams] = field(default_factory=list)

    @property
    def base(self) -> int:
        return sum(layer.conv_weights for layer in self.layers)

    @property
    def injection_added(self) -> int:
        return sum(layer.injection_params for layer in self.layers)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base": self.base,
            "injection_added": self.injection_added,
            "layers": [asdict(layer) for layer in self.layers],
        }


def count_params(spec: GeneratorSpec) -> ParamCount:
    """Exact conv-weight and injection parameter counts.

    Only convolution weights enter the base count; CBN adds an R x S bias-net
    matrix per CBN layer, LCI adds the S latent input channels of the stem.
    """
    count = ParamCount()
    for layer in layer_plan(spec):
        k2 = layer.kernel * layer.kernel
        conv = layer.in_channels * layer.out_channels * k2
        if spec.injection == "lci":
            injected = layer.latent_channels * layer.out_channels * k2
        elif layer.norm in ("cbin", "cbbn"):
            injected = spec.latent_dim * layer.out_channels
        else:
            injected = 0
        count.layers.append(LayerParams(layer.name, conv, injected))
    return count


def format_units(n: int) -> str:
    """1024-based K/M formatting with one decimal, trailing '.0' dropped."""
    for unit, scale in (("M", 1024 ** 2), ("K", 1024)):
        if n >= scale:
            text = f"{n / scale:.1f}".rstrip("0").rstrip(".")
            return f"{text}{unit}"
    return str(n)


class Generator(nn.Module):
    """Forward map ``phi(x, c)`` of the CBG or the LCI baseline."""

    def __init__(self, spec: GeneratorSpec, dropout_rng: Optional[PRNGState] = None) -> None:
        super().__init__()
        spec.validate()
        self.spec = spec
        self.plan = layer_plan(spec)
        dropout_rng = dropout_rng or PRNGState(seed=0)

        def unit(layer: LayerPlan, index: int) -> ConvUnit:
            if layer.transposed:
                conv: nn.Module = TransposedConv2d(
                    layer.in_channels, layer.out_channels, layer.kernel, layer.stride, layer.pad
                )
            else:
                conv = Conv2d(
                    layer.in_channels + layer.latent_channels,
                    layer.out_channels,
                    layer.kernel,
                    layer.stride,
                    layer.pad,
                    spec.padding,
                )
            assert layer.norm is not None
            norm = NormLayer(
                layer.norm,
                layer.out_channels,
                latent_dim=spec.latent_dim,
                eps=spec.eps,
                affine=spec.cbn_affine if layer.norm in ("cbin", "cbbn") else None,
                constraint=spec.bias_constraint,
            )
            rate = spec.dropout if layer.stage in ("down", "residual") else 0.0
            return ConvUnit(conv, norm, "relu", rate, dropout_rng.child(index))

        down = [p for p in self.plan if p.stage == "down"]
        res = [p for p in self.plan if p.stage == "residual"]
        up = [p for p in self.plan if p.stage == "up"]
        out = self.plan[-1]

        self.down = nn.ModuleList([unit(p, i) for i, p in enumerate(down)])
        offset = len(down)
        self.blocks = nn.ModuleList(
            [
                ResidualBlock(unit(res[2 * i], offset + 2 * i), unit(res[2 * i + 1], offset + 2 * i + 1))
                for i in range(spec.residual_blocks)
            ]
        )
        offset += len(res)
        self.up = nn.ModuleList([unit(p, offset + i) for i, p in enumerate(up)])
        self.out = TransposedConv2d(out.in_channels, out.out_channels, out.kernel, out.stride, out.pad, bias=True)

    def units(self) -> List[ConvUnit]:
        units: List[ConvUnit] = list(self.down)  # type: ignore[arg-type]
        for block in self.blocks:
            units.extend(block.units())  # type: ignore[union-attr]
        units.extend(self.up)  # type: ignore[arg-type]
        return units

    def norm_layers(self) -> List[NormLayer]:
        return [u.norm for u in self.units()]

    def encoder_unit_count(self) -> int:
        """Units in the down and residual stages (where CBN sits)."""
        return len(self.down) + 2 * len(self.blocks)

    def cbn_layer_indices(self) -> List[int]:
        return [i for i, n in enumerate(self.norm_layers()) if n.is_central_biasing]

    def boundary_rings(self) -> List[int]:
        """Width of the border ring touched by padding, per unit, in that unit's grid."""
        rings = []
        ring = 0
        for layer in self.plan[:-1]:
            if layer.transposed:
                ring = ring * layer.stride + layer.pad
            else:
                ring = math.ceil((ring + layer.pad) / layer.stride)
            rings.append(ring)
        return rings

    def expand_code(self, c: torch.Tensor, batch: int) -> torch.Tensor:
        code = c.to(self.out.weight.dtype)
        if code.dim() == 1:
            code = code.unsqueeze(0).expand(batch, -1)
        if code.shape != (batch, self.spec.latent_dim):
            raise ShapeMismatchError(
                f"code shape {tuple(code.shape)} incompatible with batch {batch} "
                f"and latent dim {self.spec.latent_dim}"
            )
        return code

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        code = self.expand_code(c, x.shape[0])
        h = x
        if self.spec.injection == "lci":
            h = torch.cat([x, replicate_latent(code, x.shape[-2], x.shape[-1])], dim=1)
        for u in self.down:
            h = u(h, code)
        for block in self.blocks:
            h = block(h, code)
        for u in self.up:
            h = u(h, code)
        return torch.tanh(self.out(h))

    def forward_with_features(self, x: torch.Tensor, c: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Output plus the post-normalization feature map of every unit."""
        units = self.units()
        for u in units:
            u.record = True
        try:
            out = self.forward(x, c)
            features = [u.last_features for u in units]
        finally:
            for u in units:
                u.record = False
                u.last_features = None
        return out, features  # type: ignore[return-value]


def build_generator(
    spec: GeneratorSpec,
    rng: PRNGState,
    dtype: torch.dtype = torch.float32,
) -> Generator:
    """Instantiate and initialize a generator (Gaussian weights, zero biases)."""
    spec.validate()
    generator = Generator(spec, dropout_rng=rng.child(1))
    init_gaussian_(generator, rng.child(0), std=spec.init_std, bias_std=spec.bias_init_std)
    return generator.to(dtype)


def count_module_params(generator: Generator) -> ParamCount:
    """Counting oracle over the instantiated tensors of ``generator``."""
    spec = generator.spec
    count = ParamCount()
    convs = [u.conv for u in generator.units()] + [generator.out]
    norms: List[Optional[NormLayer]] = [u.norm for u in generator.units()] + [None]
    for layer, conv, norm in zip(generator.plan, convs, norms):
        weight = conv.weight
        latent_weights = 0
        if spec.injection == "lci" and layer.name == "stem":
            latent_weights = weight[:, spec.in_channels :].numel()
        bias_net = 0
        if norm is not None and norm.bias_net is not None:
            bias_net = norm.bias_net.weight.numel()
        count.layers.append(
            LayerParams(layer.name, weight.numel() - latent_weights, latent_weights + bias_net)
        )
    return count
