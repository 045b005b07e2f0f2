"""Expert-authored metadata: one CSV row per feature, eight columns."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .cdm import (
    DataType,
    Feature,
    OntologyResource,
    Visibility,
    parse_data_type,
    parse_kind,
    parse_visibility,
)
from .errors import MetadataError
from .terminology import OntologyRegistry, Resolver

logger = logging.getLogger(__name__)

COLUMNS = ("ontology", "code", "name", "kind", "dataType", "unit", "categories", "visibility")
_ABSENT = {"", "-"}


@dataclass(frozen=True)
class Diagnostic:
    message: str
    row: Optional[int] = None
    fatal: bool = False
    source: str = ""

    def __str__(self) -> str:
        where = self.source
        if self.row is not None:
            where = f"{where}:{self.row}" if where else f"row {self.row}"
        level = "error" if self.fatal else "warning"
        return f"{level}: {where + ': ' if where else ''}{self.message}"


@dataclass
class FeatureSpec:
    name: str
    kind: str
    ontology: Optional[str] = None
    code: Optional[str] = None
    data_type: Optional[DataType] = None
    unit: Optional[str] = None
    categories_raw: Optional[str] = None
    visibility: Optional[Visibility] = None
    source_row: int = field(default=0, compare=False)

    @property
    def mapped(self) -> bool:
        return bool(self.ontology) and bool(self.code)

    @property
    def categories(self) -> dict[str, Optional[tuple[str, str]]]:
        return parse_categories(self.categories_raw) if self.categories_raw else {}


# -- categories ---------------------------------------------------------------

def _split_unescaped(text: str, sep: str, maxsplit: int = -1) -> list[str]:
    """Split on ``sep`` outside backslash escapes; escapes are kept for later."""
    parts, buf, i = [], [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            buf.append(text[i:i + 2])
            i += 2
            continue
        if ch == sep and (maxsplit < 0 or len(parts) < maxsplit):
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return parts


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def _escape(text: str) -> str:
    return "".join("\\" + c if c in "\\;=" else c for c in text)


def _split_system_code(resource: str) -> Optional[tuple[str, str]]:
    start = 0
    scheme = resource.find("://")
    if scheme != -1:
        start = scheme + 3
    # escaped colons are not separators
    i = start
    while i < len(resource):
        if resource[i] == "\\":
            i += 2
            continue
        if resource[i] == ":":
            system, code = _unescape(resource[:i]).strip(), _unescape(resource[i + 1:]).strip()
            return (system, code) if system and code else None
        i += 1
    return None


def normalize_category(value: str) -> str:
    return value.strip().lower()


def parse_categories(cell: str, problems: Optional[list[str]] = None) -> dict[str, Optional[tuple[str, str]]]:
    """Parse ``value=system:code;...`` into an ordered map of normalized values.

    Entries without ``=`` are categories with no ontology resource. Problems
    (duplicates, resources without a code) are appended to ``problems``.
    """
    out: dict[str, Optional[tuple[str, str]]] = {}

    def report(msg):
        if problems is not None:
            problems.append(msg)
        else:
            logger.warning(msg)

    for entry in _split_unescaped(cell, ";"):
        if not entry.strip():
            continue
        value_part, *rest = _split_unescaped(entry, "=", maxsplit=1)
        key = normalize_category(_unescape(value_part))
        if not key:
            report(f"category entry {entry!r} has an empty value")
            continue
        resource = None
        if rest and rest[0].strip():
            resource = _split_system_code(rest[0].strip())
            if resource is None:
                report(f"category {key!r}: resource {rest[0].strip()!r} is not of the form system:code")
        if key in out:
            report(f"duplicate category {key!r}; keeping the first")
            continue
        out[key] = resource
    return out


def serialize_categories(categories: dict[str, Optional[tuple[str, str]]]) -> str:
    entries = []
    for value, res in categories.items():
        if res is None:
            entries.append(_escape(value))
        else:
            entries.append(f"{_escape(value)}={_escape(res[0]).replace(':', chr(92) + ':')}:{_escape(res[1])}")
    return ";".join(entries)


# -- metadata file --------------------------------------------------------------

def _cell(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    value = value.strip()
    return None if value in _ABSENT else value


def parse_metadata_text(text: str, source: str = "") -> tuple[list[FeatureSpec], list[Diagnostic]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MetadataError(f"{source or 'metadata'}: empty file, expected header {', '.join(COLUMNS)}")
    lowered = [h.strip().lower() for h in header]
    positions = {}
    for col in COLUMNS:
        if col.lower() not in lowered:
            raise MetadataError(f"{source or 'metadata'}: missing header column {col!r}")
        positions[col] = lowered.index(col.lower())
    extra = [h for h in header if h.strip().lower() not in {c.lower() for c in COLUMNS}]
    if extra:
        raise MetadataError(f"{source or 'metadata'}: unexpected header column {extra[0]!r}")
    if len(set(lowered)) != len(lowered):
        raise MetadataError(f"{source or 'metadata'}: duplicate header column")

    specs: list[FeatureSpec] = []
    diags: list[Diagnostic] = []
    seen: dict[tuple[str, str], int] = {}

    def diag(row, msg, fatal=False):
        diags.append(Diagnostic(msg, row, fatal, source))

    for row_no, row in enumerate(reader, start=2):
        if not any(c.strip() for c in row):
            continue
        if len(row) != len(header):
            diag(row_no, f"expected {len(header)} cells, got {len(row)}; row skipped")
            continue
        cells = {col: _cell(row[positions[col]]) for col in COLUMNS}
        name = cells["name"]
        if not name:
            diag(row_no, "empty name; row skipped")
            continue
        if not cells["kind"]:
            diag(row_no, f"feature {name!r} has no kind; row skipped")
            continue
        kind = parse_kind(cells["kind"])
        try:
            data_type = parse_data_type(cells["dataType"]) if cells["dataType"] else None
            visibility = parse_visibility(cells["visibility"]) if cells["visibility"] else None
        except ValueError as exc:
            diag(row_no, f"{exc}; row skipped")
            continue
        unit = cells["unit"]
        if unit is not None and (data_type is None or not data_type.is_numeric):
            diag(row_no, f"feature {name!r}: unit {unit!r} on non-numeric feature ignored")
            unit = None
        categories_raw = row[positions["categories"]].strip() or None
        if categories_raw == "-":
            categories_raw = None
        if categories_raw is not None:
            if data_type is not DataType.CATEGORY:
                diag(row_no, f"feature {name!r}: categories on non-category feature ignored")
                categories_raw = None
            else:
                problems: list[str] = []
                parse_categories(categories_raw, problems)
                for p in problems:
                    diag(row_no, f"feature {name!r}: {p}")
        if bool(cells["ontology"]) != bool(cells["code"]):
            diag(row_no, f"feature {name!r}: ontology and code must both be given to map the feature")
        key = (name, kind)
        if key in seen:
            diag(row_no, f"duplicate feature {name!r} of kind {kind!r} (first at row {seen[key]}); row skipped")
            continue
        seen[key] = row_no
        specs.append(FeatureSpec(
            name=name,
            kind=kind,
            ontology=cells["ontology"],
            code=cells["code"],
            data_type=data_type,
            unit=unit,
            categories_raw=categories_raw,
            visibility=visibility,
            source_row=row_no,
        ))
    return specs, diags


def parse_metadata(path) -> tuple[list[FeatureSpec], list[Diagnostic]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except FileNotFoundError:
        raise MetadataError(f"metadata file {path} does not exist") from None
    return parse_metadata_text(text, source=str(path))


def serialize_metadata(specs: Iterable[FeatureSpec]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for s in specs:
        writer.writerow([
            s.ontology or "",
            s.code or "",
            s.name,
            s.kind,
            s.data_type.value if s.data_type else "",
            s.unit or "",
            s.categories_raw or "",
            s.visibility.value if s.visibility else "",
        ])
    return buf.getvalue()


def write_metadata(specs: Iterable[FeatureSpec], path) -> None:
    Path(path).write_text(serialize_metadata(specs), encoding="utf-8")


def gene_feature_specs(gene_names: Iterable[str], ontology: str = "hgnc",
                       visibility: Visibility = Visibility.PUBLIC) -> list[FeatureSpec]:
    """Integer genomic features whose code is the gene name without version."""
    from .ingest import strip_gene_version

    return [
        FeatureSpec(name=g, kind="genomic", ontology=ontology, code=strip_gene_version(g),
                    data_type=DataType.INTEGER, visibility=visibility)
        for g in gene_names
    ]


# -- materialization --------------------------------------------------------------

def resource_requests(spec: FeatureSpec, registry: OntologyRegistry) -> list[tuple[str, str]]:
    pairs = []
    if spec.mapped:
        pairs.append((registry.system_for(spec.ontology), spec.code))
    for res in spec.categories.values():
        if res is not None:
            pairs.append((registry.system_for(res[0]), res[1]))
    return pairs


def materialize_feature(spec: FeatureSpec, identifier: str, resolver: Resolver,
                        registry: Optional[OntologyRegistry] = None) -> Feature:
    registry = registry or OntologyRegistry()

    def resource(onto: str, code: str) -> OntologyResource:
        system = registry.system_for(onto)
        return OntologyResource(system, code, resolver.resolve(system, code))

    categories = None
    if spec.data_type is DataType.CATEGORY and spec.categories_raw:
        categories = {
            value: (resource(*res) if res is not None else None)
            for value, res in spec.categories.items()
        }
    return Feature(
        identifier=identifier,
        kind=spec.kind,
        name=spec.name,
        ontology_resource=resource(spec.ontology, spec.code) if spec.mapped else None,
        data_type=spec.data_type,
        unit=spec.unit,
        categories=categories,
        visibility=spec.visibility or Visibility.PRIVATE,
    )
