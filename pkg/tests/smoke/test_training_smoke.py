import csv

import pytest
import torch

from cbnlab.checkpoints import load_checkpoint
from cbnlab.errors import BatchSizeError, NonFiniteLossError, ShapeMismatchError
from cbnlab.generators import GeneratorSpec, build_generator
from cbnlab.synth_tasks import (
    TaskSpec,
    build_style_encoder,
    collapse_lower_bound,
    domain_codes,
    gen_dataset,
    per_domain_targets,
)
from cbnlab.tensor_core import PRNGState
from cbnlab.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    build_discriminator,
    loss_l1,
    loss_latent_regression,
    loss_lsgan,
    train,
)

TASK = TaskSpec(extent=16, samples=8, test_samples=4)


def _spec(**overrides) -> GeneratorSpec:
    return GeneratorSpec(**{"base_width": 4, "extent": 16, "latent_dim": 4, "residual_blocks": 2, **overrides})


def _config(**overrides) -> TrainConfig:
    return TrainConfig(**{"steps": 3, "batch_size": 2, "dtype": "float64", **overrides})


def _generator(spec=None, seed=0):
    return build_generator(spec or _spec(), PRNGState(seed=seed), torch.float64)


def test_adam_first_step_moves_by_learning_rate():
    config = TrainConfig(lr=0.01)
    w = torch.zeros(3, dtype=torch.float64)
    state = adam_step({"w": w}, {"w": torch.tensor([1.0, -2.0, 0.0], dtype=torch.float64)}, AdamState(), config)
    assert state.step == 1
    assert w[0].item() == pytest.approx(-0.01, rel=1e-6)
    assert w[1].item() == pytest.approx(0.01, rel=1e-6)
    assert w[2].item() == 0.0


def test_adam_skips_missing_gradients_and_checks_shapes():
    w = torch.ones(2, dtype=torch.float64)
    adam_step({"w": w}, {"w": None}, AdamState(), TrainConfig())
    assert w.tolist() == [1.0, 1.0]
    with pytest.raises(ShapeMismatchError, match="gradient for w"):
        adam_step({"w": w}, {"w": torch.ones(3, dtype=torch.float64)}, AdamState(), TrainConfig())


def test_losses():
    a = torch.tensor([1.0, 2.0, 3.0])
    assert loss_l1(a, torch.zeros(3)).item() == pytest.approx(2.0)
    assert loss_latent_regression(a, a).item() == 0.0
    assert loss_lsgan(torch.ones(4), 1.0).item() == 0.0
    assert loss_lsgan(torch.zeros(4), 1.0).item() == 1.0
    with pytest.raises(ShapeMismatchError, match="loss_l1"):
        loss_l1(a, torch.zeros(2))


def test_train_config_validation():
    with pytest.raises(ValueError, match="steps"):
        TrainConfig(steps=-1)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="dtype"):
        TrainConfig(dtype="float16")


def test_training_is_deterministic():
    data = gen_dataset(TASK, "train", torch.float64)
    first, second = _generator(), _generator()
    h1 = train(first, data, _config())
    h2 = train(second, data, _config())

    assert h1.losses() == h2.losses()
    assert len(h1.rows) == 3
    for p, q in zip(first.parameters(), second.parameters()):
        assert torch.equal(p, q)


def test_zero_steps_leaves_weights_untouched(tmp_path):
    data = gen_dataset(TASK, "train", torch.float64)
    generator = _generator()
    before = [p.clone() for p in generator.parameters()]
    history = train(generator, data, _config(steps=0), out_dir=tmp_path)

    assert history.rows == []
    assert all(torch.equal(a, b) for a, b in zip(before, generator.parameters()))
    assert (tmp_path / "history.csv").exists()
    assert load_checkpoint(tmp_path / "checkpoint").manifest["task"]["samples"] == 8


def test_history_csv_and_checkpoint_extras(tmp_path):
    data = gen_dataset(TASK, "train", torch.float64)
    history = train(_generator(), data, _config(steps=2), out_dir=tmp_path)

    with (tmp_path / "history.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "l1", "latent", "adv", "total"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    manifest = load_checkpoint(history.checkpoint).manifest
    assert manifest["train"]["steps"] == 2


def test_trailing_mean_window():
    history = TrainHistory(rows=[{"step": float(s), "l1": float(s)} for s in range(1, 6)])
    assert history.trailing_mean(5, window=2) == pytest.approx(4.5)
    assert history.trailing_mean(3, window=100) == pytest.approx(2.0)
    with pytest.raises(ValueError, match="no recorded steps"):
        history.trailing_mean(10, window=2)


def test_non_finite_loss_aborts_with_partial_history():
    data = gen_dataset(TASK, "train", torch.float64)
    generator = _generator()
    with torch.no_grad():
        generator.out.weight[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLossError) as info:
        train(generator, data, _config())
    assert info.value.step == 1
    assert info.value.history.aborted_step == 1
    assert info.value.history.rows == []


def test_guards():
    data = gen_dataset(TASK, "train", torch.float64)
    with pytest.raises(ShapeMismatchError, match="latent dim"):
        train(_generator(_spec(latent_dim=3)), data, _config())
    with pytest.raises(BatchSizeError):
        train(_generator(_spec(norm="bn")), data, _config(batch_size=1))
    with pytest.raises(ValueError, match="style encoder"):
        train(_generator(), data, _config(use_encoder=True))
    with pytest.raises(ValueError, match="discriminator"):
        train(_generator(), data, _config(adv_weight=0.1))


def test_noise_codes_ignore_task_latent_length():
    data = gen_dataset(TASK, "train", torch.float64)
    history = train(_generator(_spec(latent_dim=6)), data, _config(noise_codes=True))
    assert len(history.rows) == 3


def test_encoder_and_adversarial_terms_enter_the_loss():
    task = TaskSpec(kind="continuous", style_dim=3, extent=16, samples=8, test_samples=4)
    data = gen_dataset(task, "train", torch.float64)
    encoder = build_style_encoder(3, PRNGState(seed=1), width=4, dtype=torch.float64)
    disc = build_discriminator(3, PRNGState(seed=2), width=4, dtype=torch.float64)
    config = _config(use_encoder=True, latent_weight=0.5, adv_weight=0.1)

    history = train(_generator(_spec(latent_dim=3)), data, config, encoder=encoder, discriminator=disc)
    assert all(row["latent"] > 0 for row in history.rows)
    assert all(row["adv"] > 0 for row in history.rows)


def test_step_and_eval_hooks():
    data = gen_dataset(TASK, "train", torch.float64)
    seen = []
    history = train(
        _generator(),
        data,
        _config(steps=4, eval_every=2),
        on_step=lambda step, g: seen.append(step),
        eval_fn=lambda g: {"marker": 1.0},
    )
    assert seen == [1, 2, 3, 4]
    assert [e["step"] for e in history.evals] == [2, 4]


def test_history_csv_carries_eval_metrics(tmp_path):
    data = gen_dataset(TASK, "train", torch.float64)
    train(
        _generator(),
        data,
        _config(steps=4, eval_every=2),
        out_dir=tmp_path,
        eval_fn=lambda g: {"diversity": 0.25},
    )

    with (tmp_path / "history.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert list(rows[0]) == ["step", "l1", "latent", "adv", "total", "diversity"]
    assert [r["diversity"] for r in rows] == ["", "0.25", "", "0.25"]


def test_lci_instance_norm_output_ignores_the_code_at_every_step():
    data = gen_dataset(TASK, "train", torch.float64)
    generator = _generator(_spec(injection="lci", norm="in", up_norm="in", padding="reflection"))
    x = data.x[:2].to(torch.float64)
    first, second = domain_codes(TASK, torch.float64)[:2]
    gaps = []

    def measure(step, g):
        with torch.no_grad():
            a = g(x, first.expand(2, -1))
            b = g(x, second.expand(2, -1))
        gaps.append((a - b).abs().max().item())

    train(generator, data, _config(steps=6), on_step=measure)
    assert len(gaps) == 6
    assert max(gaps) < 1e-5


def test_lci_instance_norm_cannot_beat_the_collapse_bound():
    data = gen_dataset(TASK, "train", torch.float64)
    generator = _generator(_spec(injection="lci", norm="in", up_norm="in", padding="reflection"))
    train(generator, data, _config(steps=10, lr=0.01))

    targets = per_domain_targets(data)
    x = data.x.to(torch.float64)
    generator.eval()
    with torch.no_grad():
        errors = [
            (generator(x, code.expand(len(x), -1)) - targets[k]).abs().mean().item()
            for k, code in enumerate(domain_codes(TASK, torch.float64))
        ]
    assert sum(errors) / len(errors) >= collapse_lower_bound(data) - 1e-5


def test_noise_codes_are_gaussian():
    data = gen_dataset(TASK, "train", torch.float64)
    generator = _generator(_spec(latent_dim=6))
    seen = []
    original = generator.forward

    def recording(x, c):
        seen.append(c.detach().clone())
        return original(x, c)

    generator.forward = recording
    train(generator, data, _config(steps=40, batch_size=4, noise_codes=True))
    codes = torch.cat(seen)
    assert codes.shape == (160, 6)
    assert codes.abs().max().item() > 1.0
    assert abs(codes.mean().item()) < 0.2
    assert codes.std().item() == pytest.approx(1.0, abs=0.15)
