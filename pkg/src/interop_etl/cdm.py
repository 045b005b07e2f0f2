"""Common data model entities and identifier allocation.

Hospitals register records, records are associated with patients and
instantiate features; a feature is represented by at most one ontology
resource. Records and features are specialized by data kind.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .errors import AllocationError

logger = logging.getLogger(__name__)

KNOWN_KINDS = ("phenotypic", "clinical", "medicine", "diagnosis", "genomic", "imaging")
_KIND_ALIASES = {"image": "imaging", "medication": "medicine", "genetic": "genomic"}
GENERIC_KIND_SUFFIX = "other"

UNIT_NONE = "NONE"
"""Unit cell sentinel declaring that a numeric feature has no unit."""


class DataType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    NUMERIC = "numeric"
    BOOLEAN = "boolean"
    CATEGORY = "category"
    DATE = "date"
    DATETIME = "datetime"

    @property
    def is_numeric(self) -> bool:
        return self in (DataType.INTEGER, DataType.NUMERIC)


class Visibility(str, Enum):
    PUBLIC = "public"
    ANONYMIZED = "anonymized"
    PRIVATE = "private"


def parse_kind(label: str) -> str:
    """Normalize a data kind label. Unknown labels are accepted with a warning."""
    kind = " ".join(label.strip().lower().split())
    if not kind:
        raise ValueError("empty kind")
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in KNOWN_KINDS:
        logger.warning("unknown data kind %r routed to the generic collections", kind)
    return kind


def parse_data_type(token: str) -> DataType:
    try:
        return DataType(token.strip().lower())
    except ValueError:
        raise ValueError(f"unknown dataType {token!r}") from None


def parse_visibility(token: str) -> Visibility:
    value = token.strip().lower()
    if value == "anonymize":
        value = "anonymized"
    try:
        return Visibility(value)
    except ValueError:
        raise ValueError(f"unknown visibility {token!r}") from None


def is_unit_none(unit: Optional[str]) -> bool:
    return unit is not None and unit.strip().upper() == UNIT_NONE


def kind_suffix(kind: str) -> str:
    return kind if kind in KNOWN_KINDS else GENERIC_KIND_SUFFIX


def feature_collection(kind: str) -> str:
    return f"feature-{kind_suffix(kind)}"


def record_collection(kind: str) -> str:
    return f"record-{kind_suffix(kind)}"


@dataclass(frozen=True)
class OntologyResource:
    system: str
    code: str
    label: str = ""

    def __post_init__(self):
        if not self.system or not self.code:
            raise ValueError("ontology resource needs both system and code")

    def to_doc(self) -> dict:
        return {"system": self.system, "code": self.code, "label": self.label}

    @classmethod
    def from_doc(cls, doc: dict) -> "OntologyResource":
        return cls(doc["system"], doc["code"], doc.get("label", ""))


@dataclass(frozen=True)
class Hospital:
    identifier: str
    name: str

    def to_doc(self) -> dict:
        return {"identifier": self.identifier, "name": self.name}


@dataclass(frozen=True)
class Patient:
    identifier: str

    def to_doc(self) -> dict:
        return {"identifier": self.identifier}


@dataclass
class Feature:
    identifier: str
    kind: str
    name: str
    ontology_resource: Optional[OntologyResource] = None
    data_type: Optional[DataType] = None
    unit: Optional[str] = None
    categories: Optional[dict[str, Optional[OntologyResource]]] = None
    visibility: Visibility = Visibility.PRIVATE

    @property
    def declares_unit(self) -> bool:
        """True when a real unit (not the NONE sentinel) is declared."""
        return bool(self.unit) and not is_unit_none(self.unit)

    def resources(self) -> list[OntologyResource]:
        out = [self.ontology_resource] if self.ontology_resource else []
        if self.categories:
            out.extend(r for r in self.categories.values() if r is not None)
        return out

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {
            "identifier": self.identifier,
            "kind": self.kind,
            "name": self.name,
            "visibility": self.visibility.value,
        }
        if self.ontology_resource is not None:
            doc["ontologyResource"] = self.ontology_resource.to_doc()
        if self.data_type is not None:
            doc["dataType"] = self.data_type.value
        if self.unit is not None:
            doc["unit"] = self.unit
        if self.categories is not None:
            doc["categories"] = {
                k: (r.to_doc() if r is not None else None) for k, r in self.categories.items()
            }
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Feature":
        cats = doc.get("categories")
        return cls(
            identifier=doc["identifier"],
            kind=doc["kind"],
            name=doc["name"],
            ontology_resource=(
                OntologyResource.from_doc(doc["ontologyResource"]) if doc.get("ontologyResource") else None
            ),
            data_type=DataType(doc["dataType"]) if doc.get("dataType") else None,
            unit=doc.get("unit"),
            categories=(
                {k: (OntologyResource.from_doc(v) if v else None) for k, v in cats.items()}
                if cats is not None
                else None
            ),
            visibility=Visibility(doc.get("visibility", "private")),
        )


def value_to_doc(value: Any) -> Any:
    if isinstance(value, OntologyResource):
        return value.to_doc()
    return value


@dataclass
class Record:
    identifier: str
    kind: str
    value: Any
    dataset: str
    hospital_ref: str
    patient_ref: str
    feature_ref: str
    base_id: Optional[str] = None
    vcf: Optional[str] = None
    scan: Optional[str] = None
    interop_succeeded: bool = True
    raw_unit_matched: Optional[bool] = None

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {
            "identifier": self.identifier,
            "kind": self.kind,
            "value": value_to_doc(self.value),
            "dataset": self.dataset,
            "hospitalRef": self.hospital_ref,
            "patientRef": self.patient_ref,
            "featureRef": self.feature_ref,
            "interopSucceeded": self.interop_succeeded,
        }
        if self.base_id is not None:
            doc["baseId"] = self.base_id
        if self.vcf is not None:
            doc["vcf"] = self.vcf
        if self.scan is not None:
            doc["scan"] = self.scan
        if self.raw_unit_matched is not None:
            doc["rawUnitMatched"] = self.raw_unit_matched
        return doc


ENTITY_PREFIXES = {"feature": "Feature", "record": "Record"}


@dataclass
class CounterState:
    """Per-entity monotonically increasing counters, persisted by the store."""

    counts: dict[str, int] = field(default_factory=lambda: {"patient": 0, "feature": 0, "record": 0})
    writable: bool = True
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, entity: str) -> int:
        if not self.writable:
            raise AllocationError("counter state is not writable")
        if entity not in self.counts:
            raise AllocationError(f"unknown entity kind {entity!r}")
        with self._lock:
            self.counts[entity] += 1
            return self.counts[entity]


def next_identifier(entity: str, state: CounterState, hospital_name: Optional[str] = None) -> str:
    if entity == "patient":
        if not hospital_name:
            raise AllocationError("patient identifiers need a hospital name")
        return f"{hospital_name}:{state.bump('patient')}"
    try:
        prefix = ENTITY_PREFIXES[entity]
    except KeyError:
        raise AllocationError(f"unknown entity kind {entity!r}") from None
    return f"{prefix}:{state.bump(entity)}"


def hospital_identifier(name: str) -> str:
    return f"Hospital:{name}"


@dataclass
class AliasTable:
    """Local-only map from source patient IDs to anonymized patient IDs."""

    mapping: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def get(self, source_id: str) -> Optional[str]:
        return self.mapping.get(source_id)

    def get_or_insert(self, source_id: str, allocate: Callable[[], str]) -> tuple[str, bool]:
        with self._lock:
            found = self.mapping.get(source_id)
            if found is not None:
                return found, False
            new = allocate()
            self.mapping[source_id] = new
            return new, True

    def __len__(self) -> int:
        return len(self.mapping)


def validate_feature(f: Feature) -> list[str]:
    problems = []
    if not f.name or not f.name.strip():
        problems.append("empty name")
    if f.categories and f.data_type is not DataType.CATEGORY:
        problems.append("categories on non-category")
    if f.data_type is DataType.CATEGORY and not f.categories:
        problems.append("category without categories")
    if f.unit is not None and (f.data_type is None or not f.data_type.is_numeric):
        problems.append("unit on non-numeric")
    return problems


def content_key(patient_ref: str, feature_ref: str, dataset: str, value: Any,
                base_id: Optional[str] = None, occurrence: int = 1) -> str:
    """Identity of a record's content, used to recognize already-loaded records.

    ``occurrence`` numbers repeated identical facts within one dataset.
    """
    return json.dumps(
        [patient_ref, feature_ref, dataset, value_to_doc(value), base_id, occurrence], sort_keys=True
    )
