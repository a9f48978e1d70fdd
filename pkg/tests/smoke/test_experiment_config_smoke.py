from pathlib import Path

import pytest

from cbnlab.errors import ConfigError, MissingArtifactError
from cbnlab.experiment_config import (
    ExperimentConfig,
    dump_config,
    load_config,
    parse_config_text,
    write_config_echo,
)

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def test_shipped_configs_load():
    cbin = load_config(CONFIGS / "cbin-k4.ini")
    assert cbin.name == "cbin-k4"
    assert cbin.seed == 7
    assert cbin.task.seed == 7 and cbin.train.seed == 7
    assert cbin.generator.injection == "cbn"
    assert cbin.generator.latent_dim == 4
    assert cbin.generator.extent == cbin.task.extent

    lci = load_config(CONFIGS / "lci-in-reflection-k4.ini")
    assert lci.generator.injection == "lci"

    style = load_config(CONFIGS / "cbin-style.ini")
    assert style.task.kind == "continuous"
    assert style.generator.latent_dim == 8
    assert style.train.use_encoder is True
    assert style.train.latent_weight == 0.5


def test_empty_text_gives_defaults():
    config = parse_config_text("")
    assert config == ExperimentConfig()
    assert config.out_dir == "runs/experiment"


def test_dump_reproduces_the_config(tmp_path):
    config = load_config(CONFIGS / "cbin-style.ini").with_seed(123)
    assert parse_config_text(dump_config(config)) == config

    echo = write_config_echo(config, tmp_path / "run")
    assert echo.name == "config.ini"
    assert load_config(echo) == config


def test_with_seed_reaches_task_and_train():
    config = ExperimentConfig().with_seed(9)
    assert (config.seed, config.task.seed, config.train.seed) == (9, 9, 9)
    assert config.with_out_dir(Path("elsewhere")).out_dir == "elsewhere"


def test_unknown_key_reports_line_and_key():
    text = "[experiment]\nseed = 3\n\n[train]\nstepz = 10\n"
    with pytest.raises(ConfigError, match=r"<config>:5: unknown key \[train.stepz\]") as info:
        parse_config_text(text)
    assert info.value.line == 5
    assert info.value.key == "train.stepz"


def test_seed_belongs_to_experiment():
    with pytest.raises(ConfigError, match=r"\[experiment\]"):
        parse_config_text("[task]\nseed = 1\n")


@pytest.mark.parametrize(
    "text,message",
    [
        ("steps = 3\n", "outside any"),
        ("[train]\nsteps = 1\nsteps = 2\n", "duplicate key"),
        ("[training]\nsteps = 1\n", "unknown section"),
        ("[train]\nuse_encoder = maybe\n", "expected a boolean"),
        ("[train]\nsteps = many\n", "bad value"),
        ("[train]\nsteps = -1\n", "nonnegative"),
        ("[generator]\nlatent_dim = 3\n", "latent_dim 3"),
        ("[task]\nextent = 18\n", "multiple of 4"),
        ("[generator]\ninjection = concat\n", "injection"),
    ],
)
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(MissingArtifactError, match="not found"):
        load_config(tmp_path / "absent.ini")
