"""Losses, Adam, and the seeded training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Union

import torch
from torch import nn

from .checkpoints import save_checkpoint
from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    ADAM_LR,
    BATCH_SIZE,
    TRAIN_STEPS,
)
from .errors import BatchSizeError, NonFiniteLossError, ShapeMismatchError
from .generators import Generator
from .layers import Conv2d, init_gaussian_
from .injection_analysis import replicate_latent
from .synth_tasks import StyleEncoder, SyntheticDataset, sample_styles
from .tensor_core import PRNGState

logger = logging.getLogger(__name__)

DType = Literal["float32", "float64"]
LOSS_COMPONENTS = ("l1", "latent", "adv", "total")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = TRAIN_STEPS
    batch_size: int = BATCH_SIZE
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    l1_weight: float = 1.0
    latent_weight: float = 0.0
    adv_weight: float = 0.0
    seed: int = 0
    dtype: DType = "float32"
    use_encoder: bool = False
    noise_codes: bool = False
    log_every: int = 100
    eval_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got '{self.dtype}'")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainHistory:
    rows: List[Dict[str, float]] = field(default_factory=list)
    evals: List[Dict[str, Any]] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: Optional[str] = None
    aborted_step: Optional[int] = None

    def losses(self, component: str = "l1") -> List[float]:
        return [row[component] for row in self.rows]

    def trailing_mean(self, step: int, window: int = 100, component: str = "l1") -> float:
        """Mean of ``component`` over steps in ``(step - window, step]``."""
        values = [r[component] for r in self.rows if step - window < r["step"] <= step]
        if not values:
            raise ValueError(f"no recorded steps in ({step - window}, {step}]")
        return sum(values) / len(values)

    def eval_columns(self) -> List[str]:
        columns: List[str] = []
        for record in self.evals:
            columns.extend(k for k in record if k != "step" and k not in columns)
        return columns

    def write_csv(self, path: Union[str, Path]) -> Path:
        """One row per step; eval metrics fill their columns on the steps they ran, blank elsewhere."""
        target = Path(path)
        metrics = self.eval_columns()
        by_step = {int(record["step"]): record for record in self.evals}
        with target.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", *LOSS_COMPONENTS, *metrics])
            for row in self.rows:
                step = int(row["step"])
                record = by_step.get(step, {})
                extra = [repr(record[m]) if m in record else "" for m in metrics]
                writer.writerow([step] + [repr(row[c]) for c in LOSS_COMPONENTS] + extra)
        return target


@dataclass
class AdamState:
    step: int = 0
    exp_avg: Dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: Dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, Optional[torch.Tensor]],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    bias1 = 1.0 - config.beta1**state.step
    bias2 = 1.0 - config.beta2**state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeMismatchError(
                f"gradient for {name} has shape {tuple(grad.shape)}, parameter {tuple(param.shape)}"
            )
        m = state.exp_avg.setdefault(name, torch.zeros_like(param))
        v = state.exp_avg_sq.setdefault(name, torch.zeros_like(param))
        m.mul_(config.beta1).add_(grad, alpha=1.0 - config.beta1)
        v.mul_(config.beta2).addcmul_(grad, grad, value=1.0 - config.beta2)
        denom = (v.sqrt() / math.sqrt(bias2)).add_(config.adam_eps)
        param.addcdiv_(m, denom, value=-config.lr / bias1)
    return state


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def loss_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_shapes(pred, target, "loss_l1")
    return (pred - target).abs().mean()


def loss_latent_regression(c_pred: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    _check_shapes(c_pred, c, "loss_latent_regression")
    return (c_pred - c).abs().mean()


def loss_lsgan(d_out: torch.Tensor, label: float) -> torch.Tensor:
    return ((d_out - label) ** 2).mean()


class TinyDiscriminator(nn.Module):
    """Conditional patch discriminator over (image; replicated code)."""

    def __init__(self, latent_dim: int, width: int = 16, in_channels: int = 3) -> None:
        super().__init__()
        self.latent_dim = latent_dim
        self.stages = nn.ModuleList(
            [
                Conv2d(in_channels + latent_dim, width, 4, 2, 1, "reflection", bias=True),
                Conv2d(width, 2 * width, 4, 2, 1, "reflection", bias=True),
            ]
        )
        self.score = Conv2d(2 * width, 1, 3, 1, 1, "reflection", bias=True)

    def forward(self, image: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        code = c.unsqueeze(0).expand(image.shape[0], -1) if c.dim() == 1 else c
        h = torch.cat([image, replicate_latent(code, image.shape[-2], image.shape[-1])], dim=1)
        for stage in self.stages:
            h = nn.functional.leaky_relu(stage(h), 0.2)
        return self.score(h)


def build_discriminator(
    latent_dim: int, rng: PRNGState, width: int = 16, dtype: torch.dtype = torch.float32
) -> TinyDiscriminator:
    disc = TinyDiscriminator(latent_dim, width)
    init_gaussian_(disc, rng)
    return disc.to(dtype)


def _named(*modules: Optional[nn.Module]) -> Dict[str, torch.Tensor]:
    params: Dict[str, torch.Tensor] = {}
    for index, module in enumerate(modules):
        if module is None:
            continue
        for name, p in module.named_parameters():
            params[f"{index}.{name}"] = p
    return params


def _gradients(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> Dict[str, Optional[torch.Tensor]]:
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return dict(zip(names, grads))


StepHook = Callable[[int, Generator], None]
EvalHook = Callable[[Generator], Dict[str, Any]]


def train(
    generator: Generator,
    dataset: SyntheticDataset,
    config: TrainConfig,
    encoder: Optional[StyleEncoder] = None,
    discriminator: Optional[TinyDiscriminator] = None,
    out_dir: Optional[Union[str, Path]] = None,
    on_step: Optional[StepHook] = None,
    eval_fn: Optional[EvalHook] = None,
) -> TrainHistory:
    """Minimize ``l1 * L1(phi(x, c), y) [+ latent * reg] [+ adv * lsgan]``.

    Batches are drawn from ``dataset`` with a per-step stream of ``config.seed``.
    With ``use_encoder`` the code fed to the generator is the encoding of the
    target and a latent-regression term on random codes is added.  With
    ``noise_codes`` the code is standard Gaussian noise of the generator's own
    latent length, with no supervision at all.
    """
    spec = generator.spec
    if not config.noise_codes and spec.latent_dim != dataset.spec.latent_dim:
        raise ShapeMismatchError(
            f"generator latent dim {spec.latent_dim} != task latent dim {dataset.spec.latent_dim}"
        )
    batch_stats = spec.uses_batch_stats or spec.down_norm_kind == "cbbn"
    if batch_stats and config.batch_size < 2:
        raise BatchSizeError("batch statistics need batch_size >= 2")
    if config.use_encoder and encoder is None:
        raise ValueError("use_encoder is set but no style encoder was given")
    if config.adv_weight > 0 and discriminator is None:
        raise ValueError("adv_weight > 0 needs a discriminator")

    dtype = config.torch_dtype
    generator.to(dtype).train()
    if encoder is not None:
        encoder.to(dtype).train()
    if discriminator is not None:
        discriminator.to(dtype).train()

    g_params = _named(generator, encoder if config.use_encoder else None)
    d_params = _named(discriminator)
    g_state, d_state = AdamState(), AdamState()
    history = TrainHistory()
    root = PRNGState(seed=config.seed)
    started = time.perf_counter()
    zero = torch.zeros((), dtype=dtype)

    for step in range(1, config.steps + 1):
        stream = root.child(step)
        indices = stream.randint(len(dataset), (config.batch_size,))
        x, y, codes = (t.to(dtype) for t in dataset.batch(indices))

        latent = zero
        if config.noise_codes:
            codes = stream.normal((config.batch_size, spec.latent_dim), dtype=dtype)
        elif config.use_encoder:
            codes = encoder(y)  # type: ignore[misc]
        out = generator(x, codes)
        recon = loss_l1(out, y)
        if config.use_encoder and config.latent_weight > 0:
            random_codes = sample_styles(stream, config.batch_size, dataset.spec, dtype)
            regenerated = generator(x, random_codes)
            latent = loss_latent_regression(encoder(regenerated), random_codes)  # type: ignore[misc]

        adv = zero
        if discriminator is not None and config.adv_weight > 0:
            adv = loss_lsgan(discriminator(out, codes), 1.0)

        total = config.l1_weight * recon + config.latent_weight * latent + config.adv_weight * adv
        components = {
            "step": float(step),
            "l1": float(recon.item()),
            "latent": float(latent.item()),
            "adv": float(adv.item()),
            "total": float(total.item()),
        }
        if not math.isfinite(components["total"]):
            history.aborted_step = step
            history.wall_clock = time.perf_counter() - started
            logger.error("Non-finite loss at step %d: %s", step, components)
            raise NonFiniteLossError(step, {k: v for k, v in components.items() if k != "step"}, history)

        adam_step(g_params, _gradients(total, g_params), g_state, config)

        if discriminator is not None and config.adv_weight > 0:
            fake = out.detach()
            d_loss = 0.5 * (
                loss_lsgan(discriminator(y, codes.detach()), 1.0)
                + loss_lsgan(discriminator(fake, codes.detach()), 0.0)
            )
            adam_step(d_params, _gradients(d_loss, d_params), d_state, config)

        history.rows.append(components)
        if config.log_every and step % config.log_every == 0:
            logger.info("step %d: l1=%.5f total=%.5f", step, components["l1"], components["total"])
        if on_step is not None:
            on_step(step, generator)
        if eval_fn is not None and config.eval_every and step % config.eval_every == 0:
            record = {"step": step, **eval_fn(generator)}
            history.evals.append(record)

    history.wall_clock = time.perf_counter() - started
    if out_dir is not None:
        root_dir = Path(out_dir)
        root_dir.mkdir(parents=True, exist_ok=True)
        history.write_csv(root_dir / "history.csv")
        ckpt = save_checkpoint(
            generator,
            root_dir / "checkpoint",
            encoder=encoder,
            extra={"train": config.to_dict(), "task": dataset.spec.to_dict()},
        )
        history.checkpoint = str(ckpt)
    return history
