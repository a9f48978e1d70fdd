import json

import pytest
import torch

from cbnlab.checkpoints import load_checkpoint, save_checkpoint
from cbnlab.errors import MissingArtifactError
from cbnlab.generators import GeneratorSpec, build_generator
from cbnlab.synth_tasks import build_style_encoder
from cbnlab.tensor_core import PRNGState


def _spec(**overrides) -> GeneratorSpec:
    return GeneratorSpec(**{"base_width": 8, "extent": 16, "latent_dim": 4, **overrides})


def test_checkpoint_reload_reproduces_outputs(tmp_path):
    generator = build_generator(_spec(bias_init_std=0.5), PRNGState(seed=3))
    generator.eval()
    x = PRNGState(seed=4).normal((2, 3, 16, 16), dtype=torch.float32)
    code = torch.tensor([0.0, 1.0, 0.0, 0.0])
    expected = generator(x, code)

    save_checkpoint(generator, tmp_path / "ckpt", extra={"task": {"domains": 4}})
    loaded = load_checkpoint(tmp_path / "ckpt")
    loaded.generator.eval()

    assert loaded.generator.spec == generator.spec
    assert loaded.encoder is None
    assert loaded.manifest["task"] == {"domains": 4}
    assert torch.equal(loaded.generator(x, code), expected)


def test_manifest_records_layer_kinds(tmp_path):
    generator = build_generator(_spec(injection="lci", norm="bn", up_norm="bn"), PRNGState(seed=0))
    save_checkpoint(generator, tmp_path / "ckpt")
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    assert manifest["kind"] == "checkpoint"
    assert manifest["layers"][0] == "bn"
    assert manifest["generator"]["injection"] == "lci"


def test_encoder_travels_with_the_generator(tmp_path):
    generator = build_generator(_spec(), PRNGState(seed=0), dtype=torch.float64)
    encoder = build_style_encoder(4, PRNGState(seed=1), width=4, dtype=torch.float64)
    save_checkpoint(generator, tmp_path / "ckpt", encoder=encoder)

    loaded = load_checkpoint(tmp_path / "ckpt")
    assert loaded.encoder is not None
    assert loaded.generator.out.weight.dtype == torch.float64
    image = PRNGState(seed=2).normal((1, 3, 16, 16))
    assert torch.equal(loaded.encoder(image), encoder(image))


def test_missing_or_foreign_bundles(tmp_path):
    with pytest.raises(MissingArtifactError, match="Checkpoint not found"):
        load_checkpoint(tmp_path / "none")
    (tmp_path / "other").mkdir()
    (tmp_path / "other" / "manifest.json").write_text(json.dumps({"kind": "dataset", "tensors": []}))
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "other")
