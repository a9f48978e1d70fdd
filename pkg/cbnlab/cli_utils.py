"""Shared helpers and constants for CLI command handlers."""

import json
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .config import get_config
from .constants import EXIT_USAGE

COMMAND_EXAMPLES = {
    "check": "cbnlab check --filter decomposition",
    "train": "cbnlab train --config configs/cbin-k4.ini --out runs/cbin-k4",
    "eval": "cbnlab eval --ckpt runs/cbin-k4/checkpoint --config runs/cbin-k4/config.ini",
    "params": "cbnlab params --dims 2,8,128,256",
    "probe": "cbnlab probe --ckpt runs/cbin-k4/checkpoint --k 4",
    "study": "cbnlab study ablation --config configs/cbin-k4.ini --out runs/ablation",
    "dump-o": "cbnlab dump-o --out runs/o-planes",
}


def emit_error(command: str, message: str, code: int = EXIT_USAGE) -> int:
    print(f"Error: {message}")
    example = COMMAND_EXAMPLES.get(command)
    if example:
        print(f"Hint: try `{example}`")
    return code


def parse_int_list(raw: str) -> List[int]:
    """Parse ``"2,8,128"`` into ``[2, 8, 128]``; every entry must be a positive integer."""
    values = []
    for part in raw.split(","):
        text = part.strip()
        if not text:
            continue
        value = int(text)
        if value < 1:
            raise ValueError(f"expected positive integers, got {value}")
        values.append(value)
    if not values:
        raise ValueError("expected at least one integer")
    return values


def resolve_seed(cli_seed: Optional[int], config_seed: int) -> int:
    """``--seed`` wins over ``CBNLAB_SEED``, which wins over the config file."""
    if cli_seed is not None:
        return cli_seed
    override = get_config().seed_override
    return config_seed if override is None else override


def print_json_line(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=False))


def format_table(headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Left-aligned plain-text table with a dashed rule under the header."""
    cells = [[str(h) for h in headers]] + [[str(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(value.ljust(widths[i]) for i, value in enumerate(row)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
