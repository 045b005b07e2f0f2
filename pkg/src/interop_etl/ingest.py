"""Extract step: read datasets verbatim and apply dataset-level preprocessing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import IngestError

DEFAULT_EMPTY_MARKERS = frozenset({"", "na", "n/a", "null", "none", "-"})


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    path: Path
    kind: str
    patient_id_column: str
    sample_id_column: Optional[str] = None
    artifact_path_column: Optional[str] = None
    requires_dedicated_extraction: bool = False
    top_k: Optional[int] = None

    @property
    def identifier_columns(self) -> tuple[str, ...]:
        return tuple(c for c in (self.patient_id_column, self.sample_id_column) if c)

    @property
    def reserved_columns(self) -> tuple[str, ...]:
        """Columns that never become records (identity and artifact paths)."""
        return self.identifier_columns + ((self.artifact_path_column,) if self.artifact_path_column else ())


@dataclass(frozen=True)
class RawTable:
    descriptor: DatasetDescriptor
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...] = field(repr=False)

    def column_index(self, name: str) -> int:
        for i, h in enumerate(self.header):
            if h.strip() == name.strip():
                return i
        raise KeyError(name)

    def column(self, name: str) -> list[str]:
        i = self.column_index(name)
        return [r[i] for r in self.rows]

    def data_columns(self) -> list[str]:
        """Column names (trimmed) other than the reserved ones."""
        reserved = {c.strip() for c in self.descriptor.reserved_columns}
        return [h.strip() for h in self.header if h.strip() not in reserved]

    def select(self, columns: Iterable[str]) -> "RawTable":
        """Keep the reserved columns plus ``columns``, in original order."""
        keep = {c.strip() for c in columns} | {c.strip() for c in self.descriptor.reserved_columns}
        idx = [i for i, h in enumerate(self.header) if h.strip() in keep]
        return replace(
            self,
            header=tuple(self.header[i] for i in idx),
            rows=tuple(tuple(r[i] for i in idx) for r in self.rows),
        )


def read_tabular(d: DatasetDescriptor, delimiter: str = ",") -> RawTable:
    """Read a CSV file without altering any cell."""
    path = Path(d.path)
    if not path.is_file():
        raise IngestError(f"dataset {d.name!r}: file {path} does not exist")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise IngestError(f"dataset {d.name!r}: {path} is empty (no header row)") from None
        except csv.Error as exc:
            raise IngestError(f"dataset {d.name!r}: {exc}") from None
        trimmed = [h.strip() for h in header]
        if len(set(trimmed)) != len(trimmed):
            dup = next(h for h in trimmed if trimmed.count(h) > 1)
            raise IngestError(f"dataset {d.name!r}: duplicate column {dup!r}")
        for col, what in ((d.patient_id_column, "patient id"), (d.sample_id_column, "sample id"),
                          (d.artifact_path_column, "artifact path")):
            if col and col.strip() not in trimmed:
                raise IngestError(f"dataset {d.name!r}: {what} column {col!r} not in header")
        rows = []
        try:
            for n, row in enumerate(reader, start=1):
                if len(row) != len(header):
                    if not row:
                        continue  # blank line
                    raise IngestError(
                        f"dataset {d.name!r}: ragged row {n} (line {reader.line_num}): "
                        f"expected {len(header)} cells, got {len(row)}"
                    )
                rows.append(tuple(row))
        except csv.Error as exc:
            raise IngestError(f"dataset {d.name!r}: {exc}") from None
    return RawTable(d, header, tuple(rows))


def detect_empty(cell: str, markers: Iterable[str] = DEFAULT_EMPTY_MARKERS) -> bool:
    value = cell.strip().lower()
    return value == "" or value in markers


def strip_gene_version(gene_name: str) -> str:
    head, dot, _ = gene_name.rpartition(".")
    return head if dot else gene_name


def top_k_union_filter(t: RawTable, k: int, markers: Iterable[str] = DEFAULT_EMPTY_MARKERS) -> set[str]:
    """Union over patients of each patient's ``k`` highest-count gene columns.

    Ties at the k-th value are all kept. Empty cells do not take part in the
    ranking; any other non-integer cell is an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    genes = t.data_columns()
    if not genes:
        return set()
    idx = [t.column_index(g) for g in genes]
    markers = frozenset(markers)
    counts = np.zeros((len(t.rows), len(genes)), dtype=np.int64)
    present = np.zeros_like(counts, dtype=bool)
    for r, row in enumerate(t.rows):
        for c, i in enumerate(idx):
            cell = row[i]
            if detect_empty(cell, markers):
                continue
            try:
                counts[r, c] = int(cell.strip())
            except ValueError:
                raise IngestError(
                    f"dataset {t.descriptor.name!r}: non-integer count {cell!r} at row {r + 1}, column {genes[c]!r}"
                ) from None
            present[r, c] = True

    keep = np.zeros(len(genes), dtype=bool)
    for r in range(counts.shape[0]):
        vals = counts[r][present[r]]
        if vals.size == 0:
            continue
        if vals.size <= k:
            keep |= present[r]
            continue
        threshold = np.partition(vals, vals.size - k)[vals.size - k]
        keep |= present[r] & (counts[r] >= threshold)
    return {g for g, kept in zip(genes, keep) if kept}


def candidate_feature_count(tables: Iterable[RawTable]) -> int:
    """Every column of every table, identifier columns included, counted per dataset."""
    return sum(len(t.header) for t in tables)
