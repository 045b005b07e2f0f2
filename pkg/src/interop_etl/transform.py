"""Transform step: CDM instances with interoperable and secured values."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Mapping, Optional, Sequence

from .cdm import (
    AliasTable,
    CounterState,
    DataType,
    Feature,
    Hospital,
    Patient,
    Record,
    Visibility,
    content_key,
    next_identifier,
    value_to_doc,
)
from .errors import IntegrityError
from .ingest import DEFAULT_EMPTY_MARKERS, RawTable, detect_empty
from .metadata import normalize_category

logger = logging.getLogger(__name__)

DEFAULT_TRUE_TOKENS = ("true", "yes", "y", "1")
DEFAULT_FALSE_TOKENS = ("false", "no", "n", "0")
DEFAULT_DATE_FORMATS = ("%Y-%m-%d", "%d/%m/%Y", "%m/%d/%Y")
DEFAULT_DATETIME_FORMATS = (
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
)

_NUMBER_WITH_UNIT = re.compile(
    r"^\s*(?P<num>[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(?P<unit>\S(?:.*\S)?)?\s*$"
)
_INTEGER = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class TransformConfig:
    date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS
    datetime_formats: tuple[str, ...] = DEFAULT_DATETIME_FORMATS
    empty_markers: frozenset = DEFAULT_EMPTY_MARKERS
    true_tokens: tuple[str, ...] = DEFAULT_TRUE_TOKENS
    false_tokens: tuple[str, ...] = DEFAULT_FALSE_TOKENS
    genomic_top_k: Optional[int] = None


DEFAULT_CONFIG = TransformConfig()


@dataclass(frozen=True)
class TransformedValue:
    value: Any
    succeeded: bool
    unit_matched: Optional[bool] = None


def normalize_string(v: str) -> TransformedValue:
    return TransformedValue(v.strip().lower(), True)


def cast_boolean(v: str, true_tokens: Sequence[str] = DEFAULT_TRUE_TOKENS,
                 false_tokens: Sequence[str] = DEFAULT_FALSE_TOKENS) -> TransformedValue:
    token = v.strip().lower()
    if token in true_tokens:
        return TransformedValue(True, True)
    if token in false_tokens:
        return TransformedValue(False, True)
    return TransformedValue(v, False)


def cast_date(v: str, mode: DataType | str = DataType.DATE,
              input_formats: Optional[Sequence[str]] = None) -> TransformedValue:
    mode = DataType(mode)
    if input_formats is None:
        input_formats = DEFAULT_DATE_FORMATS if mode is DataType.DATE else DEFAULT_DATETIME_FORMATS
    text = v.strip()
    for fmt in input_formats:
        try:
            parsed = datetime.strptime(text, fmt)
        except ValueError:
            continue
        if mode is DataType.DATE:
            return TransformedValue(parsed.date().isoformat(), True)
        return TransformedValue(parsed.isoformat(timespec="seconds"), True)
    return TransformedValue(v, False)


def split_unit(v: str) -> Optional[tuple[str, Optional[str]]]:
    """``"3 years"`` -> ``("3", "years")``; None when ``v`` does not start with a number."""
    m = _NUMBER_WITH_UNIT.match(v)
    if not m:
        return None
    return m.group("num"), m.group("unit")


def _cast_number(num: str, data_type: DataType):
    if data_type is DataType.INTEGER:
        return int(num) if _INTEGER.match(num) else None
    value = float(num)
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


def cast_numeric(v: str, f: Feature) -> TransformedValue:
    declared = f.declares_unit
    parts = split_unit(v)
    if parts is None:
        return TransformedValue(v, False, False if declared else None)
    num, unit = parts
    if unit is not None and (not declared or unit.casefold() != f.unit.strip().casefold()):
        return TransformedValue(v, False, False if declared else None)
    matched = (unit is not None) if declared else None
    value = _cast_number(num, f.data_type)
    if value is None:
        return TransformedValue(v, False, matched)
    return TransformedValue(value, True, matched)


def map_category(v: str, f: Feature) -> TransformedValue:
    key = normalize_category(v)
    if f.categories and key in f.categories:
        resource = f.categories[key]
        return TransformedValue(resource if resource is not None else key, True)
    return TransformedValue(v, False)


def make_interoperable(v: str, f: Feature, config: TransformConfig = DEFAULT_CONFIG) -> TransformedValue:
    dt = f.data_type
    if dt is None:
        # normalized like a string, but not verifiably conformant
        return TransformedValue(normalize_string(v).value, False)
    if dt is DataType.STRING:
        return normalize_string(v)
    if dt is DataType.BOOLEAN:
        return cast_boolean(v, config.true_tokens, config.false_tokens)
    if dt is DataType.DATE:
        return cast_date(v, dt, config.date_formats)
    if dt is DataType.DATETIME:
        return cast_date(v, dt, config.datetime_formats)
    if dt.is_numeric:
        return cast_numeric(v, f)
    return map_category(v, f)


SUPPRESSED = object()
"""Returned by :func:`secure_value` when a value cannot be safely stored."""


def secure_value(tv: TransformedValue, f: Feature):
    """Truncate anonymized dates to the month and datetimes to the hour.

    An anonymized date that could not be cast is not stored at all, since its
    raw form may carry the day.
    """
    if f.visibility is not Visibility.ANONYMIZED or f.data_type not in (DataType.DATE, DataType.DATETIME):
        return tv.value
    if not tv.succeeded:
        return SUPPRESSED
    return tv.value[:7] if f.data_type is DataType.DATE else tv.value[:13]


# -- instance construction ------------------------------------------------------


def _ordered(tables: Iterable[RawTable]) -> list[RawTable]:
    return sorted(tables, key=lambda t: t.descriptor.name)


def build_patients(tables: Iterable[RawTable], hospital: Hospital, aliases: AliasTable,
                   counters: CounterState) -> tuple[list[Patient], list[Patient]]:
    """Return (all patients, newly created patients) in first-seen order."""
    all_patients: list[Patient] = []
    created: list[Patient] = []
    seen: set[str] = set()
    for t in _ordered(tables):
        for source_id in t.column(t.descriptor.patient_id_column):
            source_id = source_id.strip()
            if not source_id or source_id in seen:
                continue
            seen.add(source_id)
            pid, new = aliases.get_or_insert(
                source_id, lambda: next_identifier("patient", counters, hospital.name)
            )
            all_patients.append(Patient(pid))
            if new:
                created.append(Patient(pid))
    return all_patients, created


@dataclass
class TransformLog:
    records: list[Record] = field(default_factory=list)
    new_records: list[Record] = field(default_factory=list)
    skipped_columns: dict[str, list[str]] = field(default_factory=dict)
    suppressed: list[tuple[str, int, str]] = field(default_factory=list)
    missing_patient_rows: list[tuple[str, int]] = field(default_factory=list)


def build_records(t: RawTable, features: Mapping[tuple[str, str], Feature], aliases: AliasTable,
                  hospital: Hospital, counters: CounterState,
                  config: TransformConfig = DEFAULT_CONFIG,
                  existing: Optional[Mapping[str, str]] = None,
                  log: Optional[TransformLog] = None) -> list[Record]:
    """One record per non-empty cell of a column that has a feature of the dataset's kind.

    ``existing`` maps content keys of records already stored to their
    identifiers; matching records reuse the identifier instead of allocating.
    """
    d = t.descriptor
    log = log if log is not None else TransformLog()
    existing = existing or {}
    pid_i = t.column_index(d.patient_id_column)
    sample_i = t.column_index(d.sample_id_column) if d.sample_id_column else None
    artifact_i = t.column_index(d.artifact_path_column) if d.artifact_path_column else None
    reserved = {c.strip() for c in d.reserved_columns}

    mapped: list[tuple[int, Feature]] = []
    skipped = []
    for i, h in enumerate(t.header):
        name = h.strip()
        if name in reserved:
            continue
        f = features.get((d.kind, name))
        if f is None:
            skipped.append(name)
        else:
            mapped.append((i, f))
    if skipped:
        log.skipped_columns[d.name] = skipped

    out: list[Record] = []
    occurrences: Counter = Counter()
    for row_no, row in enumerate(t.rows, start=1):
        source_id = row[pid_i].strip()
        if not source_id:
            log.missing_patient_rows.append((d.name, row_no))
            continue
        patient_ref = aliases.get(source_id)
        if patient_ref is None:
            raise IntegrityError(f"dataset {d.name!r} row {row_no}: patient {source_id!r} has no alias")
        base_id = vcf = scan = None
        if sample_i is not None and d.kind == "clinical" and not detect_empty(row[sample_i], config.empty_markers):
            base_id = row[sample_i].strip()
        if artifact_i is not None and not detect_empty(row[artifact_i], config.empty_markers):
            if d.kind == "genomic":
                vcf = row[artifact_i].strip()
            elif d.kind == "imaging":
                scan = row[artifact_i].strip()
        for i, f in mapped:
            cell = row[i]
            if detect_empty(cell, config.empty_markers):
                continue
            tv = make_interoperable(cell, f, config)
            value = secure_value(tv, f)
            if value is SUPPRESSED:
                log.suppressed.append((d.name, row_no, f.name))
                continue
            base = (patient_ref, f.identifier, json.dumps(value_to_doc(value), sort_keys=True), base_id)
            occurrences[base] += 1
            key = content_key(patient_ref, f.identifier, d.name, value, base_id, occurrences[base])
            rid = existing.get(key)
            is_new = rid is None
            if is_new:
                rid = next_identifier("record", counters)
            rec = Record(
                identifier=rid,
                kind=f.kind,
                value=value,
                dataset=d.name,
                hospital_ref=hospital.identifier,
                patient_ref=patient_ref,
                feature_ref=f.identifier,
                base_id=base_id,
                vcf=vcf,
                scan=scan,
                interop_succeeded=tv.succeeded,
                raw_unit_matched=tv.unit_matched,
            )
            out.append(rec)
            log.records.append(rec)
            if is_new:
                log.new_records.append(rec)
    return out
