"""Experiment configuration files.

A config is flat ``key = value`` text under section headers::

    [experiment]
    name = cbin-k4
    out_dir = runs/cbin-k4
    seed = 7

    [task]
    kind = discrete
    domains = 4

    [generator]
    injection = cbn
    norm = in

    [train]
    steps = 2000

    [metrics]
    pairs = 500

Every key is optional; omitted keys take the dataclass defaults.  The root seed
drives the task, the initialization and the batch stream, so ``seed`` is only
accepted under ``[experiment]``.  ``latent_dim`` and ``extent`` of the generator
follow the task unless set explicitly.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, Union

from .errors import ConfigError, MissingArtifactError
from .generators import GeneratorSpec
from .metrics import MetricConfig
from .synth_tasks import TaskSpec
from .training import TrainConfig

PathLike = Union[str, Path]

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_DERIVED_SEED = {"task", "train"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    out_dir: str = "runs/experiment"
    seed: int = 0
    task: TaskSpec = field(default_factory=TaskSpec)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            seed=seed,
            task=dataclasses.replace(self.task, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )

    def with_out_dir(self, out_dir: PathLike) -> "ExperimentConfig":
        return dataclasses.replace(self, out_dir=str(out_dir))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS: Dict[str, Type[Any]] = {
    "task": TaskSpec,
    "generator": GeneratorSpec,
    "train": TrainConfig,
    "metrics": MetricConfig,
}
_EXPERIMENT_KEYS = {"name": str, "out_dir": str, "seed": int}


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for number, raw in enumerate(text.splitlines(), start=1):
        header = _SECTION_RE.match(raw)
        if header:
            section = header.group(1).strip()
            lines[(section, "")] = number
            continue
        key = _KEY_RE.match(raw)
        if key and section:
            lines.setdefault((section, key.group(1).strip().lower()), number)
    return lines


def _convert(raw: str, default: Any) -> Any:
    value = raw.strip()
    if isinstance(default, bool):
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got '{raw}'")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _field_defaults(cls: Type[Any]) -> Dict[str, Any]:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", path, exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", path, exc.lineno, f"{exc.section}.{exc.option}") from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError("duplicate section", path, exc.lineno, exc.section) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", path, line) from exc

    lines = _key_lines(text)
    experiment: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}

    for section in parser.sections():
        if section != "experiment" and section not in _SECTIONS:
            available = ", ".join(["experiment", *_SECTIONS])
            raise ConfigError(
                f"unknown section (available: {available})", path, lines.get((section, "")), section
            )
        if section == "experiment":
            defaults: Mapping[str, Any] = {k: t() for k, t in _EXPERIMENT_KEYS.items()}
        else:
            defaults = _field_defaults(_SECTIONS[section])
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            qualified = f"{section}.{key}"
            if key not in defaults or (key == "seed" and section in _DERIVED_SEED):
                hint = " (set the root seed under [experiment])" if key == "seed" else ""
                raise ConfigError(f"unknown key{hint}", path, line, qualified)
            try:
                value = _convert(raw, defaults[key])
            except ValueError as exc:
                raise ConfigError(f"bad value '{raw}': {exc}", path, line, qualified) from exc
            if section == "experiment":
                experiment[key] = value
            else:
                sections[section][key] = value

    seed = int(experiment.get("seed", 0))
    built: Dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        values = dict(sections[section])
        if section in _DERIVED_SEED:
            values["seed"] = seed
        if section == "generator":
            task: TaskSpec = built["task"]
            values.setdefault("latent_dim", task.latent_dim)
            values.setdefault("extent", task.extent)
        try:
            built[section] = cls(**values)
            if section == "generator":
                built[section].validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path, lines.get((section, "")), section) from exc

    task_dim = built["task"].latent_dim
    if built["generator"].latent_dim != task_dim:
        raise ConfigError(
            f"generator latent_dim {built['generator'].latent_dim} != task latent dim {task_dim}",
            path,
            lines.get(("generator", "latent_dim")),
            "generator.latent_dim",
        )
    return ExperimentConfig(
        name=str(experiment.get("name", "experiment")),
        out_dir=str(experiment.get("out_dir", f"runs/{experiment.get('name', 'experiment')}")),
        seed=seed,
        **built,
    )


def load_config(path: PathLike) -> ExperimentConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise MissingArtifactError(f"Config file not found: {config_path}")
    return parse_config_text(config_path.read_text(encoding="utf-8"), str(config_path))


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize ``config`` so that :func:`parse_config_text` reproduces it exactly."""
    out = [
        "[experiment]",
        f"name = {config.name}",
        f"out_dir = {config.out_dir}",
        f"seed = {config.seed}",
    ]
    for section in _SECTIONS:
        out.append("")
        out.append(f"[{section}]")
        for f in dataclasses.fields(getattr(config, section)):
            if f.name == "seed" and section in _DERIVED_SEED:
                continue
            out.append(f"{f.name} = {_format(getattr(getattr(config, section), f.name))}")
    return "\n".join(out) + "\n"


def write_config_echo(config: ExperimentConfig, directory: PathLike, filename: str = "config.ini") -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    target = root / filename
    target.write_text(dump_config(config), encoding="utf-8")
    return target
