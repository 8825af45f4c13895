"""Number formatting and CSV helpers used by the exporters."""

from __future__ import annotations

import csv
import io
import re
from typing import Iterable, Sequence

_INT_RE = re.compile(r"^[+-]?\d+$")


def fmt(x: float) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    return format(float(x), ".17g")


def parse_id(token: str) -> int | str:
    """Macrostate ids are written with ``str``; integer-looking tokens come back as ints."""
    return int(token) if _INT_RE.match(token) else token


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(csv_text(header, rows))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
