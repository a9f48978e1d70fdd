"""Handlers for the analysis commands: 'check', 'params' and 'dump-o'."""

import json
import re
from pathlib import Path

from .checks import run_checks
from .cli_utils import emit_error, format_table, parse_int_list, print_json_line
from .constants import EXIT_CHECK_FAILED, EXIT_OK
from .generators import GeneratorSpec, count_params, format_units
from .image_export import save_plane
from .injection_analysis import lci_conv
from .tensor_core import KernelBank, PRNGState


def handle_check(args) -> int:
    """Run the numerical checks; exit 0 iff every selected check passes."""
    try:
        report = run_checks(pattern=args.filter, fault_eps=getattr(args, "fault_eps", None), seed=args.seed)
    except re.error as exc:
        return emit_error("check", f"malformed --filter pattern '{args.filter}': {exc}")
    if not report.results:
        return emit_error("check", f"no checks match '{args.filter}'")

    for result in report.results:
        if args.json:
            print_json_line(result.to_dict())
        else:
            status = "PASS" if result.passed else "FAIL"
            print(f"{status}  {result.check_name}  {result.statistic:.3e} {result.relation} {result.threshold:.3e}")

    if not args.json:
        print(f"\n{len(report.results) - len(report.failed)}/{len(report.results)} checks passed")
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def handle_params(args) -> int:
    """Print added parameters per latent length for the CBN and LCI generators."""
    try:
        dims = parse_int_list(args.dims)
    except ValueError as exc:
        return emit_error("params", f"bad --dims value '{args.dims}': {exc}")

    rows = []
    base = None
    for dim in dims:
        cbn = count_params(GeneratorSpec.full_scale(dim, "cbn", base_width=args.width))
        lci = count_params(GeneratorSpec.full_scale(dim, "lci", base_width=args.width))
        base = cbn.base
        rows.append(
            {
                "latent_dim": dim,
                "cbn_added": cbn.injection_added,
                "lci_added": lci.injection_added,
            }
        )

    if args.json:
        print(json.dumps({"base": base, "width": args.width, "rows": rows}, indent=2))
        return EXIT_OK

    print(f"Base conv weights: {base:,} ({format_units(base)})")  # type: ignore[arg-type]
    table = [
        (
            r["latent_dim"],
            f"{r['cbn_added']:,}",
            f"+{format_units(r['cbn_added'])}",
            f"{r['lci_added']:,}",
            f"+{format_units(r['lci_added'])}",
        )
        for r in rows
    ]
    print(format_table(["|c|", "CBG added", "", "LCI added", ""], table))
    return EXIT_OK


def handle_dump_o(args) -> int:
    """Write the o-plane of each output channel under zero and reflection padding."""
    out_dir = Path(args.out)
    rng = PRNGState(seed=args.seed)
    latent, channels, kernel = 2, 3, 3
    x = rng.normal((1, 3, args.extent, args.extent))
    c = rng.normal((latent,))
    w = KernelBank.random(channels, 3, kernel, rng)
    v = KernelBank.random(channels, latent, kernel, rng)

    for padding in ("zero", "reflection"):
        report = lci_conv(x, c, w, v, padding, kernel // 2)
        for r in range(channels):
            path = save_plane(report.o[0, r], out_dir / f"o_{padding}_r{r}.ppm")
            print(f"Saved o-plane: {path}")
        print_json_line(
            {
                "padding": padding,
                "residual": report.residual,
                "max_full_spread": report.max_full_spread,
                "max_interior_spread": report.max_interior_spread,
            }
        )
    return EXIT_OK
