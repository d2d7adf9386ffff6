"""CSV ingestion and the embedded example datasets."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError

__all__ = ["Dataset", "ingest", "ingest_bytes", "load_embedded", "EMBEDDED"]

log = logging.getLogger(__name__)

EMBEDDED = {"bun": "bun.csv", "glyphosate": "glyphosate.csv"}
MISSING = {"", "na", "nan", "null", "."}


@dataclass
class Dataset:
    """Rows kept after ingestion, in file order, plus the rejected ones."""

    name: str
    sha256: str
    header: list[str]
    columns: dict[str, list[str]]
    lines: list[int]
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_read(self) -> int:
        return len(self.lines) + len(self.rejected)

    @property
    def n_used(self) -> int:
        return len(self.lines)

    def __len__(self) -> int:
        return len(self.lines)

    def numeric(self, column: str) -> np.ndarray:
        """A column as floats; a non-numeric cell raises with its line number."""
        if column not in self.columns:
            raise IngestionError(f"missing required column {column!r}", 1)
        out = np.empty(len(self.lines))
        for i, (raw, line) in enumerate(zip(self.columns[column], self.lines)):
            try:
                out[i] = float(raw)
            except ValueError:
                raise IngestionError(f"column {column!r}: non-numeric value {raw!r}", line) from None
        return out

    def text(self, column: str) -> list[str]:
        if column not in self.columns:
            raise IngestionError(f"missing required column {column!r}", 1)
        return list(self.columns[column])


def ingest_bytes(data: bytes, name: str, required: Sequence[str] = (), dose: str | None = None) -> Dataset:
    """Parse CSV bytes.

    Rows with a missing value in a ``required`` column are rejected and
    logged.  A non-numeric or negative ``dose`` is an error.
    """
    digest = hashlib.sha256(data).hexdigest()
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"not valid UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestionError("empty file: a header row is required", 1) from None
    except csv.Error as exc:
        raise IngestionError(f"malformed CSV: {exc}", 1) from None
    if len(set(header)) != len(header):
        raise IngestionError("duplicate column names in header", 1)
    for col in list(required) + ([dose] if dose else []):
        if col not in header:
            raise IngestionError(f"missing required column {col!r}", 1)
    idx = {h: j for j, h in enumerate(header)}
    needed = list(dict.fromkeys(list(required) + ([dose] if dose else [])))
    columns: dict[str, list[str]] = {h: [] for h in header}
    lines: list[int] = []
    rejected: list[tuple[int, str]] = []
    try:
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} fields, found {len(row)}", line)
            row = [c.strip() for c in row]
            missing = [c for c in needed if row[idx[c]].lower() in MISSING]
            if missing:
                reason = f"missing value in {', '.join(missing)}"
                log.warning("line %d rejected: %s", line, reason)
                rejected.append((line, reason))
                continue
            if dose:
                try:
                    d = float(row[idx[dose]])
                except ValueError:
                    raise IngestionError(f"non-numeric dose {row[idx[dose]]!r}", line) from None
                if not np.isfinite(d) or d < 0:
                    raise IngestionError(f"dose must be finite and non-negative, got {d:g}", line)
            for h, c in zip(header, row):
                columns[h].append(c)
            lines.append(line)
    except csv.Error as exc:
        raise IngestionError(f"malformed CSV: {exc}", reader.line_num) from None
    if not lines and not rejected:
        raise IngestionError("empty dataset: no data rows after the header", 1)
    if not lines:
        raise IngestionError("empty dataset: every row was rejected", 1)
    return Dataset(name, digest, header, columns, lines, rejected)


def load_embedded(name: str) -> bytes:
    try:
        fname = EMBEDDED[name]
    except KeyError:
        raise IngestionError(f"unknown embedded dataset {name!r}; available: {', '.join(EMBEDDED)}") from None
    return resources.files("trendkit.data").joinpath(fname).read_bytes()


def ingest(source: str | Path, required: Sequence[str] = (), dose: str | None = None) -> Dataset:
    """Read a CSV file, or an embedded dataset by name (``bun``, ``glyphosate``)."""
    src = str(source)
    if src in EMBEDDED and not Path(src).exists():
        return ingest_bytes(load_embedded(src), src, required, dose)
    path = Path(src)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {src}: {exc.strerror or exc}") from None
    return ingest_bytes(data, path.name, required, dose)
