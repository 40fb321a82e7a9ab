"""Small shared helpers: decimal formatting and json-lines I/O."""

from __future__ import annotations

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable


def format_decimal(value: float, places: int = 2) -> str:
    """Format a number with half-up rounding at ``places`` decimals.

    Rounding operates on the shortest decimal representation of the float
    (``repr``), so 1.005 renders as "1.01" rather than falling victim to its
    binary representation.
    """
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def round_half_up(value: float, places: int = 2) -> float:
    return float(format_decimal(value, places))


def load_jsonl(path: str | Path) -> list[dict[str, Any]]:
    """Read a json-lines file, skipping blank lines.

    Raises ValueError naming the offending line on malformed json.
    """
    rows: list[dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: invalid json on line {lineno + 1}: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"{path}: line {lineno + 1} is not a json object")
            rows.append(obj)
    return rows


def dump_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    """Write dict rows as json-lines. Returns the number of rows written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n
