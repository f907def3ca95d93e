"""
Formatting and parsing helpers shared by the CLI and the experiment pipeline.
"""

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union


def parse_float_list(text: Union[str, Sequence[float], None]) -> Optional[List[float]]:
    """
    Parse a comma-separated list of floats.

    Examples:
        >>> parse_float_list("1e-3, 0.5,2")
        [0.001, 0.5, 2.0]
        >>> parse_float_list(None) is None
        True

    Raises:
        ValueError: If an entry is not a finite number
    """
    if text is None:
        return None
    items = text.split(",") if isinstance(text, str) else list(text)
    values = []
    for item in items:
        if isinstance(item, str):
            item = item.strip()
            if not item:
                continue
        try:
            value = float(item)
        except (TypeError, ValueError):
            raise ValueError(f"Not a number: {item!r}")
        if not math.isfinite(value):
            raise ValueError(f"Not a finite number: {item!r}")
        values.append(value)
    return values


def jsonable(value: Any) -> Any:
    """Replace non-finite floats by None and numpy scalars/arrays by plain Python values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return jsonable(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def canonical_json(data: Any) -> str:
    """Sorted-key, two-space JSON with a trailing newline; identical input gives identical text."""
    return json.dumps(jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, data: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data), encoding="utf-8")


def config_hash(data: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    """Write rows with repr-exact floats below a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """
    Render a plain-text table with right-aligned columns.

    Floats are printed with 6 significant digits, None as '-'.
    """
    def cell(value: Any) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.6g}"
        return str(value)

    cells = [[cell(v) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for i, text in enumerate(row):
            widths[i] = max(widths[i], len(text))
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(text.rjust(w) for text, w in zip(row, widths)))
    return "\n".join(lines)
