"""Multi-run studies built on the training loop.

Each study trains several matched generators on one synthetic task and reports
per-variant outcomes.  They are directional comparisons: absolute values depend
on the surrogate scorer and the task, so callers compare variants against each
other rather than against fixed numbers.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import torch

from .constants import DIVERSITY_PAIRS
from .errors import NonFiniteLossError
from .generators import Generator, GeneratorSpec, build_generator
from .layers import BiasConstraint, ConvUnit
from .metrics import diversity_score
from .synth_tasks import SyntheticDataset, TaskSpec, gen_dataset
from .tensor_core import PaddingMode, PRNGState
from .training import TrainConfig, TrainHistory, train

logger = logging.getLogger(__name__)

CONVERGENCE_STEPS = (500, 1000, 2000)
CONSTRAINTS: Tuple[BiasConstraint, ...] = ("tanh", "sigmoid", "none")


@dataclass
class VariantOutcome:
    name: str
    settings: Dict[str, Any]
    finite: bool
    final_l1: Optional[float] = None
    diversity: Optional[float] = None
    sampled_diversity: Optional[float] = None
    aborted_step: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _datasets(task: TaskSpec) -> Tuple[SyntheticDataset, SyntheticDataset]:
    return gen_dataset(task, "train"), gen_dataset(task, "test")


def _sampling_forward(generator: Generator) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    """Forward map that keeps dropout active, so repeated calls draw fresh masks.

    Only the dropout units run in train mode; norm layers stay in eval mode, so
    batch norm reads its moving stats and never updates them.
    """
    dtype = next(generator.parameters()).dtype
    units = [m for m in generator.modules() if isinstance(m, ConvUnit) and m.dropout_rate > 0.0]

    def forward(x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        flags = [(m, m.training) for m in generator.modules()]
        generator.eval()
        for unit in units:
            unit.training = True
        try:
            return generator(x.to(dtype), c.to(dtype))
        finally:
            for m, flag in flags:
                m.training = flag

    return forward


def run_variant(
    name: str,
    spec: GeneratorSpec,
    config: TrainConfig,
    train_set: SyntheticDataset,
    test_set: SyntheticDataset,
    pairs: int = DIVERSITY_PAIRS,
    code_task: Optional[TaskSpec] = None,
    settings: Optional[Dict[str, Any]] = None,
    gaussian_codes: bool = False,
) -> VariantOutcome:
    """Train one generator and score its diversity on ``test_set``.

    ``code_task`` decides how the scoring code pairs are drawn; it defaults to
    the task the data came from.  With ``gaussian_codes`` the pairs are standard
    Gaussian noise of its code length.  A NaN abort is reported, not raised.
    """
    generator = build_generator(spec, PRNGState(seed=config.seed), config.torch_dtype)
    outcome = VariantOutcome(name=name, settings=dict(settings or {}), finite=True)
    try:
        history = train(generator, train_set, config)
    except NonFiniteLossError as exc:
        logger.warning("%s aborted at step %d", name, exc.step)
        outcome.finite = False
        outcome.aborted_step = exc.step
        return outcome

    scoring = PRNGState(seed=config.seed).child(7)
    task = code_task or test_set.spec
    if history.rows:
        outcome.final_l1 = history.rows[-1]["l1"]
    outcome.diversity = diversity_score(
        generator, test_set.x, scoring.child(0), task, pairs, gaussian_codes=gaussian_codes
    )
    if spec.dropout > 0:
        outcome.sampled_diversity = diversity_score(
            _sampling_forward(generator),
            test_set.x,
            scoring.child(1),
            task,
            pairs,
            gaussian_codes=gaussian_codes,
        )
        generator.eval()
    else:
        outcome.sampled_diversity = outcome.diversity
    return outcome


def bias_range_ablation(
    task: TaskSpec,
    spec: GeneratorSpec,
    config: TrainConfig,
    pairs: int = DIVERSITY_PAIRS,
    constraints: Sequence[BiasConstraint] = CONSTRAINTS,
) -> List[VariantOutcome]:
    """Train the CBN generator once per bias constraint on identical data and seeds."""
    train_set, test_set = _datasets(task)
    outcomes = []
    for constraint in constraints:
        variant = dataclasses.replace(spec, injection="cbn", bias_constraint=constraint)
        outcome = run_variant(
            f"cbn-{constraint}",
            variant,
            config,
            train_set,
            test_set,
            pairs,
            settings={"bias_constraint": constraint},
        )
        logger.info("bias constraint %s: %s", constraint, outcome.to_dict())
        outcomes.append(outcome)
    return outcomes


def ablation_verdict(outcomes: Sequence[VariantOutcome], match_tolerance: float = 0.25) -> Dict[str, bool]:
    """Directional reading of a tanh / sigmoid / none ablation.

    The unconstrained run "matches" tanh when its diversity lies within
    ``match_tolerance`` (relative) of the tanh run's.
    """
    by_name = {o.settings.get("bias_constraint"): o for o in outcomes}
    tanh, sigmoid, free = by_name.get("tanh"), by_name.get("sigmoid"), by_name.get("none")
    verdict = {"tanh_finite": bool(tanh and tanh.finite)}
    if tanh and sigmoid and tanh.finite:
        verdict["tanh_at_least_sigmoid"] = (
            not sigmoid.finite or (tanh.diversity or 0.0) >= (sigmoid.diversity or 0.0)
        )
    if tanh and free and tanh.finite:
        if not free.finite:
            verdict["unconstrained_matches_or_aborts"] = True
        else:
            reference = max(tanh.diversity or 0.0, 1e-12)
            gap = abs((free.diversity or 0.0) - (tanh.diversity or 0.0)) / reference
            verdict["unconstrained_matches_or_aborts"] = gap <= match_tolerance
    return verdict


@dataclass(frozen=True)
class ConvergencePoint:
    padding: PaddingMode
    seed: int
    step: int
    cbn: float
    lci: float

    @property
    def cbn_wins(self) -> bool:
        return self.cbn <= self.lci


@dataclass
class ConvergenceReport:
    points: List[ConvergencePoint] = field(default_factory=list)
    window: int = 100

    def steps(self) -> List[int]:
        return sorted({p.step for p in self.points})

    def seeds(self) -> List[int]:
        return sorted({p.seed for p in self.points})

    def wins(self, padding: PaddingMode, step: int) -> int:
        return sum(p.cbn_wins for p in self.points if p.padding == padding and p.step == step)

    def majority(self, padding: PaddingMode) -> bool:
        """CBN at or below LCI for a majority of seeds at every checkpoint."""
        seeds = [p for p in self.points if p.padding == padding]
        if not seeds:
            return False
        needed = len(self.seeds()) // 2 + 1
        return all(self.wins(padding, step) >= needed for step in self.steps())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window": self.window,
            "points": [asdict(p) for p in self.points],
            "majority": {pad: self.majority(pad) for pad in sorted({p.padding for p in self.points})},
        }


def _trailing(history: TrainHistory, step: int, window: int) -> float:
    return history.trailing_mean(step, window=window, component="l1")


def convergence_comparison(
    task: TaskSpec,
    spec: GeneratorSpec,
    config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    checkpoints: Sequence[int] = CONVERGENCE_STEPS,
    paddings: Sequence[PaddingMode] = ("zero", "reflection"),
    window: int = 100,
) -> ConvergenceReport:
    """CBIN generator against a matched LCI+IN generator, trailing-mean L1 at each checkpoint.

    Checkpoints past ``config.steps`` are dropped; if none remain the final step
    is used.
    """
    if config.steps < 1:
        raise ValueError("convergence_comparison needs at least one training step")
    train_set = gen_dataset(task, "train")
    marks = [s for s in checkpoints if s <= config.steps] or [config.steps]
    report = ConvergenceReport(window=window)
    for padding in paddings:
        for seed in seeds:
            seeded = dataclasses.replace(config, seed=seed)
            histories = {}
            for injection in ("cbn", "lci"):
                variant = dataclasses.replace(spec, injection=injection, norm="in", padding=padding)
                generator = build_generator(variant, PRNGState(seed=seed), seeded.torch_dtype)
                histories[injection] = train(generator, train_set, seeded)
            for step in marks:
                point = ConvergencePoint(
                    padding=padding,
                    seed=seed,
                    step=step,
                    cbn=_trailing(histories["cbn"], step, window),
                    lci=_trailing(histories["lci"], step, window),
                )
                logger.info(
                    "convergence %s seed %d step %d: cbn=%.5f lci=%.5f",
                    padding,
                    seed,
                    step,
                    point.cbn,
                    point.lci,
                )
                report.points.append(point)
    return report


def incentive_study(
    task: TaskSpec,
    spec: GeneratorSpec,
    config: TrainConfig,
    pairs: int = DIVERSITY_PAIRS,
    latent_lengths: Optional[Sequence[int]] = None,
    dropouts: Sequence[float] = (0.0, 0.5),
    injections: Sequence[str] = ("lci", "cbn"),
) -> List[VariantOutcome]:
    """Noise-conditioned translators: the code is Gaussian noise the loss never asks for.

    Without any term that rewards using the code, diversity measures how much
    each injection scheme lets noise through on its own.  Latent lengths default
    to the task's code length and an extended length of 8x that.
    """
    lengths = list(latent_lengths or (task.latent_dim, 8 * task.latent_dim))
    if min(lengths) < 2:
        raise ValueError(f"latent lengths must be at least 2, got {lengths}")
    train_set, test_set = _datasets(task)
    noisy = dataclasses.replace(config, noise_codes=True, use_encoder=False, adv_weight=0.0)
    outcomes = []
    for injection in injections:
        for dropout in dropouts:
            for length in lengths:
                variant = dataclasses.replace(spec, injection=injection, dropout=dropout, latent_dim=length)
                code_task = dataclasses.replace(task, kind="continuous", style_dim=length)
                name = f"{injection}-dropout{dropout:g}-latent{length}"
                outcome = run_variant(
                    name,
                    variant,
                    noisy,
                    train_set,
                    test_set,
                    pairs,
                    code_task=code_task,
                    settings={"injection": injection, "dropout": dropout, "latent_dim": length},
                    gaussian_codes=True,
                )
                logger.info("incentive %s: %s", name, outcome.to_dict())
                outcomes.append(outcome)
    return outcomes
