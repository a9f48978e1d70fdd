"""Handlers for the experiment commands: 'train', 'eval', 'probe' and 'study'."""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from .checkpoints import load_checkpoint
from .cli_utils import emit_error, print_json_line, resolve_seed
from .constants import EXIT_CHECK_FAILED, EXIT_MISSING_ARTIFACT, EXIT_OK, EXIT_USAGE
from .errors import ConfigError, MissingArtifactError, NonFiniteLossError
from .experiment_config import ExperimentConfig, load_config, write_config_echo
from .experiments import ablation_verdict, bias_range_ablation, convergence_comparison, incentive_study
from .generators import Generator, build_generator, count_params
from .image_export import save_translation_grid
from .injection_analysis import check_criteria, feature_map, feature_stat_probe
from .metrics import MetricReport, evaluate
from .synth_tasks import (
    StyleEncoder,
    SyntheticDataset,
    TaskSpec,
    build_style_encoder,
    domain_codes,
    gen_dataset,
    sample_styles,
)
from .tensor_core import PRNGState
from .training import build_discriminator, train

GRID_ROWS = 4


def _load(command: str, path: str, seed: Optional[int]) -> Union[ExperimentConfig, int]:
    try:
        config = load_config(path)
    except MissingArtifactError as exc:
        return emit_error(command, str(exc), EXIT_MISSING_ARTIFACT)
    except ConfigError as exc:
        return emit_error(command, f"invalid config: {exc}")
    resolved = resolve_seed(seed, config.seed)
    return config if resolved == config.seed else config.with_seed(resolved)


def _grid_codes(task: TaskSpec, seed: int, dtype: torch.dtype) -> torch.Tensor:
    if task.kind == "discrete":
        return domain_codes(task, dtype)
    return sample_styles(PRNGState(seed=seed).child(5), GRID_ROWS, task, dtype)


def save_grid(generator: Generator, test: SyntheticDataset, path: Path, seed: int) -> Path:
    """Inputs in the first column, one column per code."""
    dtype = test.x.dtype
    inputs = test.x[:GRID_ROWS]
    generator.eval()
    with torch.no_grad():
        outputs = [generator(inputs, code) for code in _grid_codes(test.spec, seed, dtype)]
    return save_translation_grid(inputs, outputs, path)


def score(
    generator: Generator,
    test: SyntheticDataset,
    config: ExperimentConfig,
    encoder: Optional[StyleEncoder] = None,
) -> MetricReport:
    """Metrics plus parameter counts and feature-mean criteria for one generator."""
    generator.eval()
    report = evaluate(generator, test, config.metrics, encoder, seed=config.seed)
    params = count_params(generator.spec)
    report.params = {"base": params.base, "injection_added": params.injection_added}
    codes = _grid_codes(test.spec, config.seed, test.x.dtype)
    criteria = check_criteria(feature_map(generator), test.x[: min(8, len(test))], list(codes))
    report.criteria = criteria.to_dict()
    return report


def _write_metrics(report: MetricReport, out_dir: Path, step: int) -> Path:
    path = report.write_json(out_dir / "metrics.json")
    report.append_csv(out_dir / "metrics.csv", step=step)
    return path


def handle_train(args) -> int:
    loaded = _load("train", args.config, args.seed)
    if isinstance(loaded, int):
        return loaded
    config = loaded.with_out_dir(args.out) if args.out else loaded
    out_dir = Path(config.out_dir)
    write_config_echo(config, out_dir)

    dtype = config.train.torch_dtype
    train_set = gen_dataset(config.task, "train", dtype)
    test_set = gen_dataset(config.task, "test", dtype)
    root = PRNGState(seed=config.seed)
    generator = build_generator(config.generator, root, dtype)
    encoder = None
    if config.train.use_encoder:
        encoder = build_style_encoder(config.task.latent_dim, root.child(2), dtype=dtype)
    discriminator = None
    if config.train.adv_weight > 0:
        discriminator = build_discriminator(config.task.latent_dim, root.child(3), dtype=dtype)

    def periodic_eval(g: Generator) -> Dict[str, Any]:
        metrics = evaluate(g, test_set, config.metrics, encoder, seed=config.seed)
        return {"diversity": metrics.diversity, "consistency": metrics.consistency}

    print(f"Training {config.generator.injection}/{config.generator.norm} for {config.train.steps} steps -> {out_dir}")
    try:
        history = train(
            generator,
            train_set,
            config.train,
            encoder=encoder,
            discriminator=discriminator,
            out_dir=out_dir,
            eval_fn=periodic_eval if config.train.eval_every else None,
        )
    except NonFiniteLossError as exc:
        if exc.history is not None:
            exc.history.write_csv(out_dir / "history.csv")
        print(f"Error: {exc}")
        print(f"Partial history written to {out_dir / 'history.csv'}")
        return EXIT_CHECK_FAILED

    report = score(generator, test_set, config, encoder)
    metrics_path = _write_metrics(report, out_dir, config.train.steps)
    grid_path = save_grid(generator, test_set, out_dir / "grid.ppm", config.seed)
    if history.rows:
        print(f"Final L1: {history.rows[-1]['l1']:.5f} ({history.wall_clock:.1f}s)")
    print(f"Checkpoint: {history.checkpoint}")
    print(f"Metrics: {metrics_path}")
    print(f"Grid: {grid_path}")
    print_json_line(
        {
            "diversity": report.diversity,
            "consistency": report.consistency,
            "domain_accuracy": report.domain_accuracy,
        }
    )
    return EXIT_OK


def handle_eval(args) -> int:
    loaded = _load("eval", args.config, args.seed)
    if isinstance(loaded, int):
        return loaded
    try:
        checkpoint = load_checkpoint(args.ckpt)
    except MissingArtifactError as exc:
        return emit_error("eval", str(exc), EXIT_MISSING_ARTIFACT)
    generator = checkpoint.generator
    if generator.spec != loaded.generator:
        return emit_error("eval", "checkpoint generator does not match the [generator] section of the config")

    dtype = generator.out.weight.dtype
    test_set = gen_dataset(loaded.task, "test", dtype)
    report = score(generator, test_set, loaded, checkpoint.encoder)
    out_dir = Path(args.out) if args.out else Path(args.ckpt).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = report.write_json(out_dir / "eval_metrics.json")
    grid = save_grid(generator, test_set, out_dir / "eval_grid.ppm", loaded.seed)
    print(json.dumps(report.to_dict(), indent=2))
    print(f"Metrics: {path}")
    print(f"Grid: {grid}")
    return EXIT_OK


def handle_probe(args) -> int:
    try:
        checkpoint = load_checkpoint(args.ckpt)
    except MissingArtifactError as exc:
        return emit_error("probe", str(exc), EXIT_MISSING_ARTIFACT)
    task_info = checkpoint.manifest.get("task")
    if not task_info:
        return emit_error("probe", "checkpoint manifest carries no task; retrain with `cbnlab train`")
    task = TaskSpec(**task_info)
    generator = checkpoint.generator
    dtype = generator.out.weight.dtype
    test_set = gen_dataset(task, "test", dtype)

    k = args.k or task.domains
    if task.kind == "discrete":
        palette = domain_codes(task, dtype)
    else:
        palette = sample_styles(PRNGState(seed=args.seed).child(6), k, task, dtype)
    count = min(args.samples, len(test_set)) if args.samples else len(test_set)
    samples = test_set.x[:count]
    codes = palette[torch.arange(count) % palette.shape[0]]
    try:
        result = feature_stat_probe(generator, samples, codes, k, layer=args.layer, seed=args.seed)
    except ValueError as exc:
        return emit_error("probe", str(exc))
    print_json_line(result.to_dict())
    print(f"Purity: {result.purity:.4f}")
    return EXIT_OK


def handle_study(args) -> int:
    loaded = _load("study", args.config, args.seed)
    if isinstance(loaded, int):
        return loaded
    config = loaded.with_out_dir(args.out) if args.out else loaded
    out_dir = Path(config.out_dir)
    write_config_echo(config, out_dir)
    pairs = config.metrics.pairs

    payload: Dict[str, Any]
    if args.study == "ablation":
        outcomes = bias_range_ablation(config.task, config.generator, config.train, pairs)
        payload = {"outcomes": [o.to_dict() for o in outcomes], "verdict": ablation_verdict(outcomes)}
    elif args.study == "convergence":
        seeds = [config.seed + i for i in range(args.seeds)]
        report = convergence_comparison(config.task, config.generator, config.train, seeds=seeds)
        payload = report.to_dict()
    elif args.study == "incentive":
        outcomes = incentive_study(config.task, config.generator, config.train, pairs)
        payload = {"outcomes": [o.to_dict() for o in outcomes]}
    else:
        return emit_error("study", f"Unknown study '{args.study}'. Available: ablation, convergence, incentive", EXIT_USAGE)

    target = out_dir / f"{args.study}.json"
    target.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps(payload, indent=2))
    print(f"Report: {target}")
    return EXIT_OK
