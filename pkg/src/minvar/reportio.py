"""Deterministic CSV emission shared by the reporting modules.

Every report file starts with a versioned schema comment line, then a
header row, then data rows.  Floats are rendered with 12 significant
digits so identical arithmetic yields identical bytes; None renders as
an empty cell.
"""
import csv
from pathlib import Path

FLOAT_DIGITS = 12


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.{FLOAT_DIGITS}g}"
    return str(value)


def write_report(path, schema: str, header, rows) -> None:
    """Write rows to path with a `# schema=<name>` comment line on top."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
