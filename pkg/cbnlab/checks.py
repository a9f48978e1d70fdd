"""Numerical verification suite behind ``cbnlab check``.

Each check returns a :class:`CheckResult` comparing one statistic against a
threshold.  Checks live in a :class:`CheckRegistry` and are selected by a regex
over their names.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional

import torch
from torch.func import functional_call

from .constants import GRAD_CHECK_TOLERANCE, GRAD_CHECK_TRIALS, NORM_EPS
from .generators import (
    GeneratorSpec,
    build_generator,
    count_module_params,
    count_params,
    Generator,
)
from .injection_analysis import (
    LatentCode,
    check_criteria,
    demo_in_elimination,
    demo_inter_batch_identity,
    demo_intra_batch_inconsistency,
    feature_map,
    lci_conv,
)
from .layers import NormLayer, activation, bias_net_forward, dropout
from .synth_tasks import StyleEncoder
from .tensor_core import (
    CHECK_DTYPE,
    KernelBank,
    PRNGState,
    channel_stats,
    conv2d,
    grad_check,
    pad2d,
    transposed_conv2d,
)
from .training import loss_l1, loss_latent_regression, loss_lsgan

Relation = Literal["<", ">"]

TABLE_DIMS = (2, 8, 128, 256)
CBN_CHANNELS_FULL = 3520
BASE_TARGET = 8 * 1024 * 1024
# Statistics that must be exactly zero
EXACT = 1e-300


@dataclass
class CheckResult:
    check_name: str
    statistic: float
    threshold: float
    relation: Relation = "<"
    detail: str = ""

    @property
    def passed(self) -> bool:
        if self.relation == "<":
            return self.statistic < self.threshold
        return self.statistic > self.threshold

    def to_dict(self) -> Dict:
        return {
            "check_name": self.check_name,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "pass": self.passed,
        }


@dataclass
class CheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> Dict:
        return {
            "passed": self.all_passed,
            "results": [r.to_dict() for r in self.results],
        }


@dataclass
class CheckContext:
    seed: int = 0
    fault_eps: Optional[float] = None
    trials: int = 100
    decomposition_draws: int = 1000
    grad_trials: int = GRAD_CHECK_TRIALS

    @property
    def norm_eps(self) -> float:
        return NORM_EPS if self.fault_eps is None else self.fault_eps

    @property
    def identity_eps(self) -> float:
        return 0.0 if self.fault_eps is None else self.fault_eps

    def rng(self, name: str) -> PRNGState:
        return PRNGState(seed=self.seed).child(zlib.crc32(name.encode("utf-8")))


CheckFn = Callable[[CheckContext], CheckResult]


class CheckRegistry:
    """Registry for named checks."""

    def __init__(self) -> None:
        self._checks: Dict[str, CheckFn] = {}

    def register(self, name: str, fn: CheckFn) -> None:
        self._checks[name] = fn

    def names(self) -> List[str]:
        return list(self._checks)

    def select(self, pattern: Optional[str] = None) -> List[str]:
        """Names matching ``pattern`` (a regex; ``re.error`` if malformed)."""
        if not pattern:
            return self.names()
        compiled = re.compile(pattern)
        return [name for name in self._checks if compiled.search(name)]

    def run(self, pattern: Optional[str] = None, context: Optional[CheckContext] = None) -> CheckReport:
        context = context or CheckContext()
        report = CheckReport()
        for name in self.select(pattern):
            result = self._checks[name](context)
            result.check_name = name
            report.results.append(result)
        return report


def _small_spec(**overrides) -> GeneratorSpec:
    base = dict(base_width=8, extent=16, latent_dim=4)
    base.update(overrides)
    return GeneratorSpec(**base)


def _small_generator(ctx: CheckContext, name: str, **overrides) -> Generator:
    return build_generator(_small_spec(**overrides), ctx.rng(name), dtype=CHECK_DTYPE)


def _one_hots(count: int, size: int = 4) -> List[torch.Tensor]:
    return [LatentCode.one_hot(i, size).values for i in range(count)]


# -- tensor primitives -------------------------------------------------------


def _conv_linearity(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("conv.linearity")
    worst = 0.0
    for _ in range(20):
        bank = KernelBank.random(3, 2, 3, rng)
        x, u = rng.normal((2, 2, 6, 6)), rng.normal((2, 2, 6, 6))
        a, b = 1.7, -0.4
        lhs = conv2d(a * x + b * u, bank, 1, "reflection", 1)
        rhs = a * conv2d(x, bank, 1, "reflection", 1) + b * conv2d(u, bank, 1, "reflection", 1)
        worst = max(worst, ((lhs - rhs).abs().max() / rhs.abs().max()).item())
    return CheckResult("", worst, 1e-12)


def _transposed_adjoint(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("transposed.adjoint")
    worst = 0.0
    for _ in range(20):
        bank = KernelBank.random(3, 2, 4, rng)
        a = rng.normal((1, 2, 8, 8))
        b = rng.normal((1, 3, 4, 4))
        left = (conv2d(a, bank, 2, "zero", 1) * b).sum()
        right = (a * transposed_conv2d(b, bank, 2, 1)).sum()
        worst = max(worst, (abs(left - right) / max(abs(left), abs(right))).item())
    return CheckResult("", worst, 1e-10)


def _reflection_constant(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("reflection.constant_plane")
    values = rng.normal((1, 4, 1, 1))
    padded = pad2d(values.expand(1, 4, 5, 5), 3, "reflection")
    spread = (padded.amax(dim=(2, 3)) - padded.amin(dim=(2, 3))).max().item()
    return CheckResult("", spread, EXACT)


def _norm_unit_variance(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("norm.unit_variance")
    layer = NormLayer("in", 4, eps=ctx.norm_eps).to(CHECK_DTYPE)
    out = layer(rng.normal((3, 4, 8, 8)))
    _, std = channel_stats(out, "instance")
    return CheckResult("", (std - 1.0).abs().max().item(), 1e-4)


def _activation_monotone(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("activation.monotone")
    a = rng.normal((1000,))
    b = a + rng.uniform((1000,), 0.0, 1.0)
    worst = 0.0
    for kind in ("relu", "tanh", "sigmoid"):
        worst = max(worst, (activation(a, kind) - activation(b, kind)).clamp_min(0).max().item())
    return CheckResult("", worst, EXACT)


def _dropout_fraction(ctx: CheckContext) -> CheckResult:
    units = torch.ones(1_000_000, dtype=CHECK_DTYPE)
    kept = dropout(units, 0.5, ctx.rng("dropout.survivor_fraction"), "train")
    fraction = (kept != 0).to(CHECK_DTYPE).mean().item()
    return CheckResult("", abs(fraction - 0.5), 0.002)


# -- decomposition -----------------------------------------------------------


def _decomposition(padding: str) -> CheckFn:
    def run(ctx: CheckContext) -> CheckResult:
        rng = ctx.rng(f"decomposition.residual.{padding}")
        worst = 0.0
        for i in range(ctx.decomposition_draws):
            stream = rng.child(i)
            w = KernelBank.random(3, 2, 3, stream)
            v = KernelBank.random(3, 2, 3, stream)
            x = stream.normal((1, 2, 6, 6))
            c = stream.normal((2,))
            report = lci_conv(x, c, w, v, padding, 1)  # type: ignore[arg-type]
            worst = max(worst, report.residual)
        return CheckResult("", worst, 1e-10)

    return run


def _o_constant_reflection(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("decomposition.o_constant.reflection")
    w, v = KernelBank.random(4, 2, 3, rng), KernelBank.random(4, 3, 3, rng)
    report = lci_conv(rng.normal((2, 2, 7, 7)), rng.normal((3,)), w, v, "reflection", 1)
    return CheckResult("", report.max_full_spread, 1e-12)


def _o_interior_zero(ctx: CheckContext) -> CheckResult:
    rng = ctx.rng("decomposition.o_interior.zero")
    w, v = KernelBank.random(4, 2, 3, rng), KernelBank.random(4, 3, 3, rng)
    report = lci_conv(rng.normal((2, 2, 7, 7)), rng.normal((3,)), w, v, "zero", 1)
    detail = f"boundary spread {report.max_full_spread:.3g}"
    if report.max_full_spread < 1e-6:
        return CheckResult("", float("inf"), 1e-12, detail="boundary unexpectedly constant")
    return CheckResult("", report.max_interior_spread, 1e-12, detail=detail)


def _zero_pad_counts(ctx: CheckContext) -> CheckResult:
    v_value = 0.3
    v = KernelBank(torch.full((1, 1, 3, 3), v_value, dtype=CHECK_DTYPE))
    w = KernelBank(torch.zeros((1, 1, 3, 3), dtype=CHECK_DTYPE))
    x = torch.zeros((1, 1, 5, 5), dtype=CHECK_DTYPE)
    o = lci_conv(x, torch.ones(1, dtype=CHECK_DTYPE), w, v, "zero", 1).o[0, 0]
    expected = torch.full((5, 5), 9 * v_value, dtype=CHECK_DTYPE)
    expected[0, :] = expected[-1, :] = expected[:, 0] = expected[:, -1] = 6 * v_value
    for i in (0, -1):
        for j in (0, -1):
            expected[i, j] = 4 * v_value
    return CheckResult("", (o - expected).abs().max().item(), 1e-12)


# -- batch-norm inconsistency ---------------------------------------------


def _intra_spread(ctx: CheckContext) -> CheckResult:
    result = demo_intra_batch_inconsistency(ctx.rng("intra_batch.spread"), ctx.trials, eps=ctx.identity_eps)
    return CheckResult("", result.worst_spread, 0.1, ">")


def _intra_identical(ctx: CheckContext) -> CheckResult:
    result = demo_intra_batch_inconsistency(
        ctx.rng("intra_batch.identical"), 10, identical_inputs=True, eps=ctx.identity_eps
    )
    return CheckResult("", result.worst_spread, 1e-9)


def _intra_formula(ctx: CheckContext) -> CheckResult:
    result = demo_intra_batch_inconsistency(ctx.rng("intra_batch.formula"), ctx.trials, eps=ctx.identity_eps)
    return CheckResult("", result.formula_gap, 1e-9)


def _inter_identity(ctx: CheckContext) -> CheckResult:
    trials = demo_inter_batch_identity(ctx.rng("inter_batch.identity"), ctx.trials)
    return CheckResult("", max(t.gap for t in trials), 1e-6)


def _inter_same_mapping(ctx: CheckContext) -> CheckResult:
    trials = demo_inter_batch_identity(ctx.rng("inter_batch.same_mapping_mean"), 10)
    return CheckResult("", max(t.same_mapping_mean for t in trials), 1e-12)


# -- instance-norm elimination --------------------------------------------


def _code_pairs(rng: PRNGState, count: int, size: int = 4):
    return [(rng.normal((size,)), rng.normal((size,))) for _ in range(count)]


def _in_elimination(padding: str, relation: Relation, threshold: float) -> CheckFn:
    def run(ctx: CheckContext) -> CheckResult:
        name = f"in_elimination.{padding}"
        generator = _small_generator(ctx, name, injection="lci", norm="in", up_norm="in", padding=padding)
        rng = ctx.rng(name).child(99)
        x = rng.normal((2, 3, 16, 16))
        gap = demo_in_elimination(generator, x, _code_pairs(rng, 10))
        return CheckResult("", gap, threshold, relation)

    return run


# -- central biasing --------------------------------------------------------


def _cbin_layer(ctx: CheckContext, name: str, kind: str = "cbin") -> NormLayer:
    layer = NormLayer(kind, 5, latent_dim=3, eps=ctx.norm_eps).to(CHECK_DTYPE)  # type: ignore[arg-type]
    with torch.no_grad():
        layer.bias_net.weight.copy_(ctx.rng(name).child(1).normal((5, 3)))  # type: ignore[union-attr]
    return layer


def _cbn_mean(ctx: CheckContext) -> CheckResult:
    layer = _cbin_layer(ctx, "cbn.mean_property")
    rng = ctx.rng("cbn.mean_property")
    c = rng.normal((3,))
    out = layer(rng.normal((6, 5, 8, 8)), c)
    means = out.mean(dim=(2, 3))
    b = bias_net_forward(layer.bias_net, c)  # type: ignore[arg-type]
    return CheckResult("", (means - b.unsqueeze(0)).abs().max().item(), 1e-9)


def _cbn_consistency(ctx: CheckContext) -> CheckResult:
    layer = _cbin_layer(ctx, "cbn.consistency_gap")
    rng = ctx.rng("cbn.consistency_gap")
    means = layer(rng.normal((6, 5, 8, 8)), rng.normal((3,))).mean(dim=(2, 3))
    return CheckResult("", (means.amax(dim=0) - means.amin(dim=0)).max().item(), 1e-9)


def _cbn_diversity(ctx: CheckContext) -> CheckResult:
    layer = _cbin_layer(ctx, "cbn.diversity_gap")
    rng = ctx.rng("cbn.diversity_gap")
    y = rng.normal((2, 5, 8, 8))
    c1, c2 = rng.normal((3,)), rng.normal((3,))
    gap = layer(y, c1).mean(dim=(2, 3)) - layer(y, c2).mean(dim=(2, 3))
    expected = bias_net_forward(layer.bias_net, c1) - bias_net_forward(layer.bias_net, c2)  # type: ignore[arg-type]
    return CheckResult("", (gap - expected.unsqueeze(0)).abs().max().item(), 1e-9)


def _cbn_bounded(ctx: CheckContext) -> CheckResult:
    layer = _cbin_layer(ctx, "cbn.bias_bounded")
    c = ctx.rng("cbn.bias_bounded").normal((3,))
    net = layer.bias_net
    assert net is not None
    with torch.no_grad():
        # deep saturation, short of the point where float64 tanh rounds to 1
        net.weight.mul_(15.0 / (net.weight @ c).abs().max())
    b = bias_net_forward(net, c)
    return CheckResult("", b.abs().max().item(), 1.0)


# -- criteria -----------------------------------------------------------------


def _criteria(name: str, overrides: dict, field_name: str, relation: Relation, threshold: float) -> CheckFn:
    def run(ctx: CheckContext) -> CheckResult:
        generator = _small_generator(ctx, name, **overrides)
        x = ctx.rng(name).child(7).normal((4, 3, 16, 16))
        report = check_criteria(feature_map(generator), x, _one_hots(3))
        return CheckResult("", getattr(report, field_name), threshold, relation)

    return run


# -- gradients ---------------------------------------------------------------


def _grad(name: str, build: Callable[[PRNGState], tuple], trials: Optional[int] = None) -> CheckFn:
    """Worst per-coordinate error over ``ctx.grad_trials`` seeded draws (or ``trials`` if fewer)."""

    def run(ctx: CheckContext) -> CheckResult:
        count = ctx.grad_trials if trials is None else min(trials, ctx.grad_trials)
        stream = ctx.rng(name)
        worst = 0.0
        for trial in range(count):
            computation, params = build(stream.child(trial))
            worst = max(worst, grad_check(computation, params))
        return CheckResult("", worst, GRAD_CHECK_TOLERANCE, detail=f"worst of {count} draws")

    return run


def _weighted(out: torch.Tensor, rng_weights: torch.Tensor) -> torch.Tensor:
    return (out * rng_weights).sum()


def _grad_linear(rng: PRNGState):
    x = rng.normal((6,))
    return (lambda p: (p["w"] * x).sum()), {"w": rng.normal((6,))}


def _grad_conv(rng: PRNGState):
    r = rng.normal((1, 3, 5, 5))

    def f(p):
        return _weighted(torch.tanh(conv2d(p["x"], KernelBank(p["w"]), 1, "reflection", 1)), r)

    return f, {"x": rng.normal((1, 2, 5, 5)), "w": rng.normal((3, 2, 3, 3), std=0.5)}


def _grad_transposed(rng: PRNGState):
    r = rng.normal((1, 2, 6, 6))

    def f(p):
        return _weighted(torch.tanh(transposed_conv2d(p["x"], KernelBank(p["w"]), 2, 1)), r)

    return f, {"x": rng.normal((1, 3, 3, 3)), "w": rng.normal((3, 2, 4, 4), std=0.5)}


def _grad_norm(kind: str):
    def build(rng: PRNGState):
        layer = NormLayer(kind, 2).to(CHECK_DTYPE)  # type: ignore[arg-type]
        r = rng.normal((3, 2, 4, 4))

        def f(p):
            out = functional_call(layer, {"affine.gamma": p["gamma"], "affine.beta": p["beta"]}, (p["z"],))
            return _weighted(out, r)

        return f, {
            "z": rng.normal((3, 2, 4, 4)),
            "gamma": 1.0 + rng.normal((2,), std=0.3),
            "beta": rng.normal((2,), std=0.3),
        }

    return build


def _grad_cbn(kind: str):
    def build(rng: PRNGState):
        layer = NormLayer(kind, 3, latent_dim=2).to(CHECK_DTYPE)  # type: ignore[arg-type]
        c = rng.normal((3, 2))
        r = rng.normal((3, 3, 4, 4))

        def f(p):
            return _weighted(functional_call(layer, {"bias_net.weight": p["F"]}, (p["y"], c)), r)

        return f, {"y": rng.normal((3, 3, 4, 4)), "F": rng.normal((3, 2), std=0.5)}

    return build


def _grad_bias_net(rng: PRNGState):
    layer = NormLayer("cbin", 4, latent_dim=3).to(CHECK_DTYPE)
    c = rng.normal((2, 3))
    r = rng.normal((2, 4))
    net = layer.bias_net

    def f(p):
        return _weighted(functional_call(net, {"weight": p["F"]}, (c,)), r)

    return f, {"F": rng.normal((4, 3), std=0.5)}


def _grad_encoder(rng: PRNGState):
    encoder = StyleEncoder(latent_dim=3, width=2).to(CHECK_DTYPE)
    image = rng.normal((2, 3, 8, 8))
    r = rng.normal((2, 3))

    def f(p):
        return _weighted(functional_call(encoder, dict(p), (image,)), r)

    params = {name: rng.normal(tuple(p.shape), std=0.5) for name, p in encoder.named_parameters()}
    return f, params


def _grad_losses(rng: PRNGState):
    target = rng.normal((2, 3, 4, 4))
    codes = rng.uniform((4, 3), -1.0, 1.0)

    def f(p):
        return (
            loss_l1(p["pred"], target)
            + loss_latent_regression(p["code"], codes)
            + loss_lsgan(p["d"], 1.0)
            + loss_lsgan(p["d"], 0.0)
        )

    # keep |pred - target| and |code - codes| away from the kink of the absolute value
    pred = target + torch.sign(rng.normal((2, 3, 4, 4))) * (0.1 + rng.uniform((2, 3, 4, 4), 0.0, 1.0))
    code = codes + torch.sign(rng.normal((4, 3))) * (0.1 + rng.uniform((4, 3), 0.0, 1.0))
    return f, {
        "pred": pred,
        "code": code,
        "d": rng.normal((2, 1, 3, 3)),
    }


# -- parameter counts ---------------------------------------------------------


def _params_cbn(dim: int) -> CheckFn:
    def run(ctx: CheckContext) -> CheckResult:
        added = count_params(GeneratorSpec.full_scale(dim)).injection_added
        return CheckResult("", float(abs(added - dim * CBN_CHANNELS_FULL)), 0.5)

    return run


def _params_base(ctx: CheckContext) -> CheckResult:
    base = count_params(GeneratorSpec.full_scale(8)).base
    return CheckResult("", abs(base - BASE_TARGET) / BASE_TARGET, 0.02)


def _params_oracle(ctx: CheckContext) -> CheckResult:
    worst = 0
    for injection in ("cbn", "lci"):
        spec = GeneratorSpec.full_scale(8, injection=injection)  # type: ignore[arg-type]
        planned = count_params(spec)
        counted = count_module_params(Generator(spec))
        worst = max(worst, abs(planned.base - counted.base), abs(planned.injection_added - counted.injection_added))
    return CheckResult("", float(worst), 0.5)


def _build_default_registry() -> CheckRegistry:
    registry = CheckRegistry()
    entries: Dict[str, CheckFn] = {
        "conv.linearity": _conv_linearity,
        "transposed.adjoint": _transposed_adjoint,
        "reflection.constant_plane": _reflection_constant,
        "norm.unit_variance": _norm_unit_variance,
        "activation.monotone": _activation_monotone,
        "dropout.survivor_fraction": _dropout_fraction,
        "decomposition.residual.zero": _decomposition("zero"),
        "decomposition.residual.reflection": _decomposition("reflection"),
        "decomposition.o_constant.reflection": _o_constant_reflection,
        "decomposition.o_interior.zero": _o_interior_zero,
        "decomposition.zero_pad_counts": _zero_pad_counts,
        "intra_batch.spread": _intra_spread,
        "intra_batch.identical": _intra_identical,
        "intra_batch.formula": _intra_formula,
        "inter_batch.identity": _inter_identity,
        "inter_batch.same_mapping_mean": _inter_same_mapping,
        "in_elimination.reflection": _in_elimination("reflection", "<", 1e-5),
        "in_elimination.zero_padding_leaks": _in_elimination("zero", ">", 1e-3),
        "cbn.mean_property": _cbn_mean,
        "cbn.consistency_gap": _cbn_consistency,
        "cbn.diversity_gap": _cbn_diversity,
        "cbn.bias_bounded": _cbn_bounded,
        "criteria.cbin.consistency": _criteria(
            "criteria.cbin", {"bias_init_std": 0.5}, "consistency_gap", "<", 1e-4
        ),
        "criteria.cbin.diversity": _criteria(
            "criteria.cbin", {"bias_init_std": 0.5}, "diversity_gap", ">", 1e-2
        ),
        "criteria.lci_in_reflection.diversity_collapses": _criteria(
            "criteria.lci_in", {"injection": "lci", "norm": "in"}, "diversity_gap", "<", 1e-5
        ),
        "criteria.lci_bn_reflection.consistency_breaks": _criteria(
            "criteria.lci_bn", {"injection": "lci", "norm": "bn", "up_norm": "bn"}, "consistency_gap", ">", 1e-4
        ),
        "grad.linear": _grad("grad.linear", _grad_linear),
        "grad.conv": _grad("grad.conv", _grad_conv),
        "grad.transposed_conv": _grad("grad.transposed_conv", _grad_transposed),
        "grad.bn": _grad("grad.bn", _grad_norm("bn")),
        "grad.in": _grad("grad.in", _grad_norm("in")),
        "grad.cbbn": _grad("grad.cbbn", _grad_cbn("cbbn")),
        "grad.cbin": _grad("grad.cbin", _grad_cbn("cbin")),
        "grad.bias_net": _grad("grad.bias_net", _grad_bias_net),
        "grad.encoder": _grad("grad.encoder", _grad_encoder, trials=10),
        "grad.losses": _grad("grad.losses", _grad_losses),
        "params.base_within_2pct": _params_base,
        "params.counting_oracle": _params_oracle,
    }
    for dim in TABLE_DIMS:
        entries[f"params.cbn_added.s{dim}"] = _params_cbn(dim)
    for name, fn in entries.items():
        registry.register(name, fn)
    return registry


DEFAULT_REGISTRY = _build_default_registry()


def run_checks(
    pattern: Optional[str] = None,
    fault_eps: Optional[float] = None,
    seed: int = 0,
    registry: Optional[CheckRegistry] = None,
) -> CheckReport:
    context = CheckContext(seed=seed, fault_eps=fault_eps)
    return (registry or DEFAULT_REGISTRY).run(pattern, context)
