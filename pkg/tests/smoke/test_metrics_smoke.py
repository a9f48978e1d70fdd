import csv
import json

import pytest
import torch

from cbnlab.errors import ShapeMismatchError
from cbnlab.metrics import (
    MetricConfig,
    SurrogateNet,
    consistency_score,
    diversity_score,
    domain_accuracy,
    evaluate,
    perceptual_distance,
    reference_diversity,
)
from cbnlab.synth_tasks import AnalyticTranslator, TaskSpec, gen_dataset
from cbnlab.tensor_core import PRNGState

TASK = TaskSpec(extent=16, samples=4, test_samples=8)


def _ignore_code(x, c):
    return x


def test_surrogate_is_seeded_and_frozen():
    a, b = SurrogateNet(seed=3), SurrogateNet(seed=3)
    assert list(a.parameters()) == []
    assert all(torch.equal(p, q) for p, q in zip(a.stage_weights(), b.stage_weights()))
    assert not torch.equal(a.stage0, SurrogateNet(seed=4).stage0)
    features = a(torch.zeros((1, 3, 16, 16)))
    assert [f.shape[1] for f in features] == [8, 16, 32, 64, 64]
    assert features[-1].shape[-1] == 1


def test_perceptual_distance_properties():
    net = SurrogateNet()
    rng = PRNGState(seed=1)
    a, b = rng.normal((3, 16, 16)), rng.normal((3, 16, 16))
    assert perceptual_distance(a, a, net) == pytest.approx(0.0, abs=1e-12)
    assert perceptual_distance(a, b, net) == pytest.approx(perceptual_distance(b, a, net))
    batched = perceptual_distance(torch.stack([a, a]), torch.stack([a, b]), net)
    assert batched.shape == (2,)
    with pytest.raises(ShapeMismatchError):
        perceptual_distance(a, b[:, :8], net)


def test_code_blind_translator_has_zero_diversity():
    data = gen_dataset(TASK, "test")
    score = diversity_score(_ignore_code, data.x, PRNGState(seed=0), TASK, pairs=8)
    assert score == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="pairs"):
        diversity_score(_ignore_code, data.x, PRNGState(seed=0), TASK, pairs=0)


def test_ground_truth_mapping_is_diverse_and_consistent():
    data = gen_dataset(TASK, "test", torch.float64)
    truth = AnalyticTranslator(TASK)
    assert reference_diversity(data, PRNGState(seed=0), pairs=8) > 0.0
    assert consistency_score(truth, None, data.x, data.y, data.codes) == pytest.approx(1.0, abs=1e-9)
    assert domain_accuracy(truth, data) == 1.0
    assert domain_accuracy(_ignore_code, data) == 0.0


def test_diversity_rises_and_consistency_falls_with_injected_perturbation():
    data = gen_dataset(TASK, "test", torch.float64)
    truth = AnalyticTranslator(TASK)

    def perturbed(level):
        # scales the code-dependent recoloring, so outputs under two codes drift apart
        def phi(x, c):
            return x + (1.0 + level) * (truth(x, c) - x)

        return phi

    diversity, consistency = [], []
    for level in (0.0, 1.0, 3.0):
        phi = perturbed(level)
        diversity.append(diversity_score(phi, data.x, PRNGState(seed=5), TASK, pairs=16))
        consistency.append(consistency_score(phi, None, data.x, data.y, data.codes))
    assert diversity[0] < diversity[1] < diversity[2]
    assert consistency[0] > consistency[1] > consistency[2]


def test_gaussian_code_pairs_use_the_task_code_length():
    data = gen_dataset(TASK, "test")
    seen = []

    def recording(x, c):
        seen.append(c)
        return x

    diversity_score(recording, data.x, PRNGState(seed=0), TASK, pairs=200, gaussian_codes=True)
    codes = torch.cat(seen)
    assert codes.shape == (400, TASK.latent_dim)
    assert codes.abs().max().item() > 1.0
    assert abs(codes.mean().item()) < 0.15


def test_consistency_is_not_clamped():
    data = gen_dataset(TASK, "test", torch.float64)

    def far(x, c):
        return -torch.ones_like(x) * data.y[: x.shape[0]].sign()

    assert consistency_score(far, None, data.x, data.y, data.codes) < 1.0
    with pytest.raises(ValueError, match="encoder or ground-truth"):
        consistency_score(_ignore_code, None, data.x, data.y)


def test_domain_accuracy_needs_discrete_task():
    data = gen_dataset(TaskSpec(kind="continuous", extent=16, samples=2, test_samples=2), "test")
    with pytest.raises(ValueError, match="discrete"):
        domain_accuracy(_ignore_code, data)


def test_evaluate_report_files(tmp_path):
    data = gen_dataset(TASK, "test", torch.float64)
    config = MetricConfig(pairs=6, eval_samples=5)
    report = evaluate(AnalyticTranslator(TASK), data, config, seed=2)

    assert report.samples == 5
    assert report.pairs == 6
    assert report.domain_accuracy == 1.0
    assert report.diversity > 0.0
    assert report.config["eval_samples"] == 5

    again = evaluate(AnalyticTranslator(TASK), data, config, seed=2)
    assert again.to_dict() == report.to_dict()

    report.write_json(tmp_path / "metrics.json")
    assert json.loads((tmp_path / "metrics.json").read_text())["pairs"] == 6
    report.append_csv(tmp_path / "metrics.csv", step=1)
    report.append_csv(tmp_path / "metrics.csv", step=2)
    with (tmp_path / "metrics.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0][0] == "step"
    assert [r[0] for r in rows[1:]] == ["1", "2"]
