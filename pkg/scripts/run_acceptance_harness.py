#!/usr/bin/env python3
"""Run the desk-scale acceptance experiments and write reports/acceptance.{json,md}.

The numerical checks are instant; the training criteria (mode-collapse contrast,
IN elimination after training, ablation, convergence, probe) take minutes at the
default budget.  ``--quick`` shrinks every budget for a plumbing run whose
verdicts are not meaningful.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from cbnlab.checks import run_checks  # noqa: E402
from cbnlab.experiments import (  # noqa: E402
    ablation_verdict,
    bias_range_ablation,
    convergence_comparison,
)
from cbnlab.generators import Generator, GeneratorSpec, build_generator  # noqa: E402
from cbnlab.injection_analysis import demo_in_elimination, feature_stat_probe  # noqa: E402
from cbnlab.metrics import diversity_score, domain_accuracy  # noqa: E402
from cbnlab.synth_tasks import TaskSpec, domain_codes, gen_dataset  # noqa: E402
from cbnlab.tensor_core import PRNGState  # noqa: E402
from cbnlab.training import TrainConfig, train  # noqa: E402

REPORT_DIR = ROOT / "reports"


def _timed(fn: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
    started = time.perf_counter()
    result = fn()
    result["seconds"] = round(time.perf_counter() - started, 2)
    return result


def _checks(pattern: str) -> Dict[str, Any]:
    report = run_checks(pattern=pattern)
    return {
        "passed": report.all_passed,
        "checks": [r.to_dict() for r in report.results],
    }


class DeskRuns:
    """Trained generators shared by the criteria that need them."""

    def __init__(self, steps: int, samples: int, pairs: int, seed: int) -> None:
        self.task = TaskSpec(samples=samples, test_samples=max(16, samples // 8), seed=seed)
        self.config = TrainConfig(steps=steps, seed=seed)
        self.pairs = pairs
        self.train_set = gen_dataset(self.task, "train")
        self.test_set = gen_dataset(self.task, "test")
        self._cache: Dict[str, Generator] = {}

    def spec(self, **overrides: Any) -> GeneratorSpec:
        return GeneratorSpec(latent_dim=self.task.latent_dim, extent=self.task.extent, **overrides)

    def trained(self, name: str, spec: GeneratorSpec) -> Generator:
        if name not in self._cache:
            generator = build_generator(spec, PRNGState(seed=self.config.seed))
            print(f"training {name} for {self.config.steps} steps")
            train(generator, self.train_set, self.config)
            generator.eval()
            self._cache[name] = generator
        return self._cache[name]

    def cbin(self) -> Generator:
        return self.trained("cbin", self.spec())

    def lci_in(self) -> Generator:
        return self.trained("lci_in_reflection", self.spec(injection="lci", norm="in", up_norm="in"))


def _in_elimination(runs: DeskRuns) -> Dict[str, Any]:
    """Gap measured in float64 on copies, so float32 rounding does not mask the identity."""
    rng = PRNGState(seed=99)
    x = runs.test_set.x[:4].double()
    dim = runs.task.latent_dim
    pairs = [(rng.uniform((dim,), -1.0, 1.0), rng.uniform((dim,), -1.0, 1.0)) for _ in range(10)]
    fresh = build_generator(runs.spec(injection="lci", norm="in", up_norm="in"), PRNGState(seed=1))
    at_init = demo_in_elimination(copy.deepcopy(fresh).double().eval(), x, pairs)
    trained = demo_in_elimination(copy.deepcopy(runs.lci_in()).double().eval(), x, pairs)
    return {
        "gap_at_init": at_init,
        "gap_after_training": trained,
        "threshold": 1e-5,
        "passed": at_init < 1e-5 and trained < 1e-5,
    }


def _collapse_contrast(runs: DeskRuns) -> Dict[str, Any]:
    scores = {}
    for name, generator in (("cbin", runs.cbin()), ("lci_in_reflection", runs.lci_in())):
        scores[name] = {
            "domain_accuracy": domain_accuracy(generator, runs.test_set),
            "diversity": diversity_score(generator, runs.test_set.x, PRNGState(seed=5), runs.task, runs.pairs),
        }
    cbin, lci = scores["cbin"], scores["lci_in_reflection"]
    passed = (
        cbin["domain_accuracy"] >= 0.9
        and abs(lci["domain_accuracy"] - 0.25) <= 0.1
        and lci["diversity"] < 1e-3
        and cbin["diversity"] >= 5 * lci["diversity"]
    )
    return {"scores": scores, "passed": passed}


def _probe(runs: DeskRuns) -> Dict[str, Any]:
    k = runs.task.domains
    x = runs.test_set.x[:32]
    samples = x.repeat_interleave(k, dim=0)
    codes = domain_codes(runs.task).repeat(x.shape[0], 1)
    cbin = feature_stat_probe(runs.cbin(), samples, codes, k)
    lci = feature_stat_probe(runs.lci_in(), samples, codes, k)
    return {
        "cbin": cbin.to_dict(),
        "lci_in_reflection": lci.to_dict(),
        "passed": cbin.purity >= 0.95 and lci.purity < 0.5,
    }


def _ablation(runs: DeskRuns) -> Dict[str, Any]:
    outcomes = bias_range_ablation(runs.task, runs.spec(), runs.config, runs.pairs)
    verdict = ablation_verdict(outcomes)
    return {
        "outcomes": [o.to_dict() for o in outcomes],
        "verdict": verdict,
        "passed": all(verdict.values()),
    }


def _convergence(runs: DeskRuns, seeds: int) -> Dict[str, Any]:
    report = convergence_comparison(
        runs.task,
        runs.spec(),
        runs.config,
        seeds=list(range(seeds)),
        paddings=("zero",),
    )
    payload = report.to_dict()
    payload["passed"] = report.majority("zero")
    return payload


def main(argv: List[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Desk-scale acceptance harness")
    parser.add_argument("--steps", type=int, default=2000, help="Training steps per run (default: 2000)")
    parser.add_argument("--samples", type=int, default=2048, help="Training samples (default: 2048)")
    parser.add_argument("--pairs", type=int, default=500, help="Diversity pairs (default: 500)")
    parser.add_argument("--seeds", type=int, default=3, help="Convergence seeds (default: 3)")
    parser.add_argument("--seed", type=int, default=0, help="Root seed (default: 0)")
    parser.add_argument("--quick", action="store_true", help="Tiny budgets; verdicts are not meaningful")
    parser.add_argument("--skip-training", action="store_true", help="Only run the numerical checks")
    args = parser.parse_args(argv)

    if args.quick:
        args.steps, args.samples, args.pairs, args.seeds = 20, 64, 16, 1

    REPORT_DIR.mkdir(parents=True, exist_ok=True)
    criteria: Dict[str, Dict[str, Any]] = {
        "decomposition": _timed(lambda: _checks(r"^decomposition\.residual")),
        "inter_batch_identity": _timed(lambda: _checks(r"^inter_batch\.identity$")),
        "cbn_mean_property": _timed(lambda: _checks(r"^cbn\.(mean_property|consistency_gap)$")),
        "parameter_table": _timed(lambda: _checks(r"^params\.")),
        "gradients": _timed(lambda: _checks(r"^grad\.")),
    }
    if not args.skip_training:
        runs = DeskRuns(args.steps, args.samples, args.pairs, args.seed)
        criteria["in_elimination"] = _timed(lambda: _in_elimination(runs))
        criteria["mode_collapse_contrast"] = _timed(lambda: _collapse_contrast(runs))
        criteria["probe"] = _timed(lambda: _probe(runs))
        criteria["bias_ablation"] = _timed(lambda: _ablation(runs))
        criteria["convergence"] = _timed(lambda: _convergence(runs, args.seeds))

    payload = {
        "budget": {
            "steps": args.steps,
            "samples": args.samples,
            "pairs": args.pairs,
            "seeds": args.seeds,
            "quick": args.quick,
        },
        "criteria": criteria,
        "summary": {
            "total": len(criteria),
            "passed": sum(1 for c in criteria.values() if c["passed"]),
        },
    }

    out_json = REPORT_DIR / "acceptance.json"
    out_md = REPORT_DIR / "acceptance.md"
    out_json.write_text(json.dumps(payload, indent=2, default=float), encoding="utf-8")

    lines = [
        "# Acceptance Report",
        "",
        f"- budget: **{args.steps}** steps, **{args.samples}** samples, **{args.pairs}** pairs, **{args.seeds}** seeds",
        f"- passed: **{payload['summary']['passed']}/{payload['summary']['total']}**",
    ]
    if args.quick:
        lines.append("- quick mode: verdicts below are plumbing only")
    lines.extend(["", "## Criteria", ""])
    for name, result in criteria.items():
        status = "PASS" if result["passed"] else "FAIL"
        lines.append(f"- `{name}`: **{status}** ({result['seconds']}s)")
    lines.append("")
    out_md.write_text("\n".join(lines), encoding="utf-8")

    print(f"wrote {out_json}")
    print(f"wrote {out_md}")
    return 0 if payload["summary"]["passed"] == payload["summary"]["total"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
