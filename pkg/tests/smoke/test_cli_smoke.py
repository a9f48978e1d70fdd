"""CLI smoke checks (exit codes, outputs and actionable failure hints)."""

from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]


def _run(root: Path, args: list[str]) -> subprocess.CompletedProcess[str]:
    env = dict(os.environ)
    env["PYTHONPATH"] = str(root)
    env.pop("CBNLAB_SEED", None)
    return subprocess.run(
        [sys.executable, "-m", "cbnlab.cli", *args],
        cwd=str(root),
        env=env,
        capture_output=True,
        text=True,
    )


def _tiny_config(tmp_path: Path, out_dir: Path) -> Path:
    path = tmp_path / "tiny.ini"
    path.write_text(
        "\n".join(
            [
                "[experiment]",
                "name = tiny",
                f"out_dir = {out_dir}",
                "seed = 3",
                "",
                "[task]",
                "extent = 16",
                "samples = 8",
                "test_samples = 4",
                "",
                "[generator]",
                "base_width = 4",
                "residual_blocks = 1",
                "",
                "[train]",
                "steps = 2",
                "batch_size = 2",
                "",
                "[metrics]",
                "pairs = 4",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return path


def test_no_command_and_help():
    assert _run(ROOT, []).returncode == 2
    assert _run(ROOT, ["--help"]).returncode == 0
    assert _run(ROOT, ["train"]).returncode == 2


def test_params_table_and_json():
    table = _run(ROOT, ["params"])
    assert table.returncode == 0
    assert "Base conv weights: 8,407,424 (8M)" in table.stdout
    assert "7,040" in table.stdout and "+6.9K" in table.stdout

    data = _run(ROOT, ["params", "--dims", "2,256", "--json"])
    payload = json.loads(data.stdout)
    assert payload["base"] == 8_407_424
    assert payload["rows"][0] == {"latent_dim": 2, "cbn_added": 7040, "lci_added": 2 * 64 * 49}
    assert payload["rows"][1]["cbn_added"] == 901120

    bad = _run(ROOT, ["params", "--dims", "2,x"])
    assert bad.returncode == 2
    assert "Error: bad --dims value" in bad.stdout
    assert "Hint: try `cbnlab params" in bad.stdout


def test_check_filter_text_and_json():
    text = _run(ROOT, ["check", "--filter", r"^cbn\."])
    assert text.returncode == 0
    assert "PASS  cbn.bias_bounded" in text.stdout
    assert "4/4 checks passed" in text.stdout

    lines = _run(ROOT, ["check", "--filter", "decomposition.zero_pad", "--json"]).stdout.splitlines()
    records = [json.loads(line) for line in lines]
    assert records == [
        {
            "check_name": "decomposition.zero_pad_counts",
            "statistic": records[0]["statistic"],
            "threshold": 1e-12,
            "pass": True,
        }
    ]


def test_check_failures_and_usage_errors():
    faulty = _run(ROOT, ["check", "--filter", "norm.unit_variance", "--fault-eps", "1.0"])
    assert faulty.returncode == 1
    assert "FAIL  norm.unit_variance" in faulty.stdout

    malformed = _run(ROOT, ["check", "--filter", "("])
    assert malformed.returncode == 2
    assert "Error: malformed --filter pattern" in malformed.stdout

    empty = _run(ROOT, ["check", "--filter", "no-such-check"])
    assert empty.returncode == 2
    assert "no checks match" in empty.stdout


def test_missing_and_invalid_artifacts(tmp_path):
    missing = _run(ROOT, ["train", "--config", str(tmp_path / "absent.ini")])
    assert missing.returncode == 3
    assert "Config file not found" in missing.stdout

    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nstepz = 1\n", encoding="utf-8")
    invalid = _run(ROOT, ["train", "--config", str(bad)])
    assert invalid.returncode == 2
    assert "unknown key" in invalid.stdout

    config = _tiny_config(tmp_path, tmp_path / "run")
    no_ckpt = _run(ROOT, ["eval", "--ckpt", str(tmp_path / "nowhere"), "--config", str(config)])
    assert no_ckpt.returncode == 3
    assert "Checkpoint not found" in no_ckpt.stdout

    assert _run(ROOT, ["probe", "--ckpt", str(tmp_path / "nowhere")]).returncode == 3


def test_train_eval_probe_round_trip(tmp_path):
    run_dir = tmp_path / "run"
    config = _tiny_config(tmp_path, run_dir)

    trained = _run(ROOT, ["train", "--config", str(config)])
    assert trained.returncode == 0, trained.stdout + trained.stderr
    for name in ("config.ini", "history.csv", "metrics.json", "metrics.csv", "grid.ppm"):
        assert (run_dir / name).exists(), name
    assert (run_dir / "checkpoint" / "manifest.json").exists()
    summary = json.loads(trained.stdout.strip().splitlines()[-1])
    assert set(summary) == {"diversity", "consistency", "domain_accuracy"}

    evaluated = _run(
        ROOT,
        [
            "eval",
            "--ckpt",
            str(run_dir / "checkpoint"),
            "--config",
            str(run_dir / "config.ini"),
            "--out",
            str(tmp_path / "eval"),
        ],
    )
    assert evaluated.returncode == 0, evaluated.stdout + evaluated.stderr
    scored = json.loads((tmp_path / "eval" / "eval_metrics.json").read_text())
    reference = json.loads((run_dir / "metrics.json").read_text())
    for key in ("diversity", "consistency", "domain_accuracy"):
        assert scored[key] == pytest.approx(reference[key], rel=1e-6, abs=1e-9)
    assert scored["params"] == reference["params"]
    assert (tmp_path / "eval" / "eval_grid.ppm").exists()

    probed = _run(ROOT, ["probe", "--ckpt", str(run_dir / "checkpoint"), "--k", "4"])
    assert probed.returncode == 0, probed.stdout + probed.stderr
    assert "Purity:" in probed.stdout
    assert json.loads(probed.stdout.splitlines()[0])["samples"] == 4


def test_seed_override_changes_the_echo(tmp_path):
    config = _tiny_config(tmp_path, tmp_path / "run")
    result = _run(ROOT, ["train", "--config", str(config), "--seed", "21", "--out", str(tmp_path / "seeded")])
    assert result.returncode == 0, result.stdout + result.stderr
    echo = (tmp_path / "seeded" / "config.ini").read_text()
    assert "seed = 21" in echo


def test_studies_write_reports(tmp_path):
    config = _tiny_config(tmp_path, tmp_path / "study")

    ablation = _run(ROOT, ["study", "ablation", "--config", str(config)])
    assert ablation.returncode == 0, ablation.stdout + ablation.stderr
    payload = json.loads((tmp_path / "study" / "ablation.json").read_text())
    assert [o["name"] for o in payload["outcomes"]] == ["cbn-tanh", "cbn-sigmoid", "cbn-none"]
    assert "tanh_finite" in payload["verdict"]

    convergence = _run(ROOT, ["study", "convergence", "--config", str(config), "--seeds", "1"])
    assert convergence.returncode == 0, convergence.stdout + convergence.stderr
    report = json.loads((tmp_path / "study" / "convergence.json").read_text())
    assert {p["padding"] for p in report["points"]} == {"zero", "reflection"}
    assert {p["step"] for p in report["points"]} == {2}


def test_dump_o_writes_planes(tmp_path):
    result = _run(ROOT, ["dump-o", "--out", str(tmp_path / "planes"), "--extent", "8"])
    assert result.returncode == 0
    written = sorted(p.name for p in (tmp_path / "planes").iterdir())
    assert len(written) == 6
    assert "o_reflection_r0.ppm" in written
    records = [json.loads(line) for line in result.stdout.splitlines() if line.startswith("{")]
    by_padding = {r["padding"]: r for r in records}
    assert by_padding["reflection"]["max_full_spread"] < 1e-9
    assert by_padding["zero"]["max_full_spread"] > 1e-6
    assert by_padding["zero"]["max_interior_spread"] < 1e-9
