"""Interoperability metrics: data (A), metadata (M) and ETL (E) ratios."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from .cdm import DataType, Feature, OntologyResource, Record, is_unit_none
from .metadata import FeatureSpec

METRIC_IDS = ("A1", "A2", "M1", "M2", "M3", "M4", "M5", "E1", "E2", "E3", "E4", "E5", "E6", "E7")
DESCRIPTIONS = {
    "A1": "ratio of selected features",
    "A2": "ratio of datasets that do not require dedicated extraction",
    "M1": "features with both ontology name and code",
    "M2": "features with a dataType",
    "M3": "features with an explicit visibility",
    "M4": "categorical features with at least one category",
    "M5": "numerical features with a unit",
    "E1": "ontology resources with a label",
    "E2": "values whose interoperability function succeeded",
    "E3": "numerical values whose unit matches the feature unit",
    "E4": "categorical values found in the feature categories",
    "E5": "records with a known hospital reference",
    "E6": "records with a known patient reference",
    "E7": "records with a known feature reference",
}
HIGH_THRESHOLD = Fraction(4, 5)
MAX_DETAILS = 20
REPORT_VERSION = 1


def round_half_up(score: Fraction, places: int = 2) -> str:
    scale = 10 ** places
    q = (2 * score.numerator * scale + score.denominator) // (2 * score.denominator)
    return f"{q // scale}.{q % scale:0{places}d}"


def classify(score: Optional[Fraction]) -> str:
    if score is None:
        return "N/A"
    if score == 1:
        return "F"
    return "H" if score >= HIGH_THRESHOLD else "L"


@dataclass
class MetricResult:
    id: str
    numerator: int
    denominator: int
    details: list[str] = field(default_factory=list)
    note: str = ""

    def __post_init__(self):
        if self.denominator < 0 or self.numerator < 0 or self.numerator > max(self.denominator, 0):
            if self.denominator > 0 or self.numerator:
                raise ValueError(f"{self.id}: invalid ratio {self.numerator}/{self.denominator}")
        self.details = list(self.details[:MAX_DETAILS])

    @property
    def score(self) -> Optional[Fraction]:
        return Fraction(self.numerator, self.denominator) if self.denominator > 0 else None

    @property
    def level(self) -> str:
        return classify(self.score)

    @property
    def display(self) -> str:
        s = self.score
        return "N/A" if s is None else round_half_up(s)

    def to_dict(self) -> dict:
        s = self.score
        return {
            "id": self.id,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "score": None if s is None else f"{s.numerator}/{s.denominator}",
            "rounded": self.display,
            "level": self.level,
            "details": list(self.details),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricResult":
        return cls(d["id"], d["numerator"], d["denominator"], list(d.get("details", [])), d.get("note", ""))


def _ratio(mid: str, num: int, den: int, details=(), note="") -> MetricResult:
    return MetricResult(mid, num, den, list(details), note)


# -- data metrics -------------------------------------------------------------

def metric_A1(selected: int, candidates: int) -> MetricResult:
    if not 0 <= selected <= candidates:
        raise ValueError("expected 0 <= selected <= candidates")
    return _ratio("A1", selected, candidates,
                  note="selected = identifier columns + columns joined to a feature, after filtering; "
                       "candidates = all columns of all datasets")


def metric_A2(no_extraction: int, total_datasets: int) -> MetricResult:
    if not 0 <= no_extraction <= total_datasets:
        raise ValueError("expected 0 <= no_extraction <= total_datasets")
    return _ratio("A2", no_extraction, total_datasets)


# -- metadata metrics -----------------------------------------------------------

def metrics_M(specs: Sequence[FeatureSpec]) -> list[MetricResult]:
    """Metadata metrics over the parsed metadata rows.

    Rows are used rather than materialized features so that an omitted
    visibility is still visible (features default to private).
    """
    n = len(specs)
    unmapped = [s.name for s in specs if not s.mapped]
    untyped = [s.name for s in specs if s.data_type is None]
    no_vis = [s.name for s in specs if s.visibility is None]
    categorical = [s for s in specs if s.data_type is DataType.CATEGORY]
    empty_cats = [s.name for s in categorical if not s.categories]
    numeric = [s for s in specs if s.data_type is not None and s.data_type.is_numeric]
    no_unit = [s.name for s in numeric if not s.unit]
    explicit_none = sum(1 for s in numeric if is_unit_none(s.unit))
    return [
        _ratio("M1", n - len(unmapped), n, unmapped),
        _ratio("M2", n - len(untyped), n, untyped),
        _ratio("M3", n - len(no_vis), n, no_vis, note="only explicitly provided visibility counts"),
        _ratio("M4", len(categorical) - len(empty_cats), len(categorical), empty_cats),
        _ratio("M5", len(numeric) - len(no_unit), len(numeric), no_unit,
               note=f"{explicit_none} feature(s) explicitly declare no unit"),
    ]


# -- ETL metrics ----------------------------------------------------------------

def _e1(resources: Iterable[tuple[str, OntologyResource]]) -> MetricResult:
    total = labeled = 0
    missing = []
    for owner, r in resources:
        total += 1
        if r.label:
            labeled += 1
        else:
            missing.append(f"{owner}: {r.system}|{r.code}")
    return _ratio("E1", labeled, total, missing)


def _feature_resources(features: Iterable[Feature]):
    for f in features:
        if f.ontology_resource is not None:
            yield f.identifier, f.ontology_resource
        for value, r in (f.categories or {}).items():
            if r is not None:
                yield f"{f.identifier}[{value}]", r


def _e_from_rows(rows: Iterable[tuple], features: dict[str, Feature],
                 resolve: Callable[[str, object], bool]) -> list[MetricResult]:
    """rows: (record id, feature ref, succeeded, unit matched, category found, hospital ref, patient ref)."""
    n = ok = 0
    failed: list[str] = []
    unit_den = unit_num = 0
    unit_off: list[str] = []
    unit_features: set[str] = set()
    cat_den = cat_num = 0
    cat_off: list[str] = []
    refs = {"hospital": [0, []], "patient": [0, []], "feature": [0, []]}
    for rid, fref, succeeded, unit_matched, cat_found, href, pref in rows:
        n += 1
        if succeeded:
            ok += 1
        elif len(failed) < MAX_DETAILS:
            failed.append(rid)
        f = features.get(fref)
        if f is not None and f.data_type is not None and f.data_type.is_numeric and f.declares_unit:
            unit_den += 1
            unit_features.add(f.identifier)
            if unit_matched:
                unit_num += 1
            elif len(unit_off) < MAX_DETAILS:
                unit_off.append(rid)
        if f is not None and f.data_type is DataType.CATEGORY:
            cat_den += 1
            if cat_found:
                cat_num += 1
            elif len(cat_off) < MAX_DETAILS:
                cat_off.append(rid)
        for kind, ref in (("hospital", href), ("patient", pref), ("feature", fref)):
            if resolve(kind, ref):
                refs[kind][0] += 1
            elif len(refs[kind][1]) < MAX_DETAILS:
                refs[kind][1].append(rid)
    return [
        _ratio("E2", ok, n, failed),
        _ratio("E3", unit_num, unit_den, unit_off,
               note=f"denominator counts records; {len(unit_features)} unit-bearing feature(s) involved"),
        _ratio("E4", cat_num, cat_den, cat_off),
        _ratio("E5", refs["hospital"][0], n, refs["hospital"][1]),
        _ratio("E6", refs["patient"][0], n, refs["patient"][1]),
        _ratio("E7", refs["feature"][0], n, refs["feature"][1]),
    ]


def metrics_E(features: Sequence[Feature], records: Iterable[Record],
              resolve: Callable[[str, object], bool]) -> list[MetricResult]:
    """ETL metrics from the instances produced by this run (pipeline-logged path)."""
    by_id = {f.identifier: f for f in features}
    rows = (
        (r.identifier, r.feature_ref, r.interop_succeeded, r.raw_unit_matched,
         r.interop_succeeded, r.hospital_ref, r.patient_ref)
        for r in records
    )
    return [_e1(_feature_resources(features))] + _e_from_rows(rows, by_id, resolve)


def _category_found(value, feature: Feature) -> bool:
    cats = feature.categories or {}
    if isinstance(value, dict):
        try:
            res = OntologyResource.from_doc(value)
        except (KeyError, ValueError):
            return False
        return any(r == res for r in cats.values())
    return isinstance(value, str) and value in cats and cats[value] is None


def recompute_E(store) -> list[MetricResult]:
    """ETL metrics re-derived by scanning the stored documents only."""
    features = {}
    for coll in store.collections():
        if coll.startswith("feature-"):
            for doc in store.docs(coll):
                features[doc["identifier"]] = Feature.from_doc(doc)

    def rows():
        for coll in store.collections():
            if not coll.startswith("record-"):
                continue
            for doc in store.docs(coll):
                f = features.get(doc.get("featureRef"))
                found = f is not None and _category_found(doc.get("value"), f)
                yield (doc["identifier"], doc.get("featureRef"), bool(doc.get("interopSucceeded")),
                       doc.get("rawUnitMatched"), found, doc.get("hospitalRef"), doc.get("patientRef"))

    return [_e1(_feature_resources(features.values()))] + _e_from_rows(rows(), features, store.resolve_ref)


# -- report -------------------------------------------------------------------------

@dataclass
class FairNote:
    principle: str
    passed: bool
    rationale: str


def fair_notes(metrics: dict[str, MetricResult]) -> list[FairNote]:
    def good(*ids):
        return all(metrics[i].level in ("F", "H") for i in ids if i in metrics)

    def full(*ids):
        return all(metrics[i].level == "F" for i in ids if i in metrics)

    return [
        FairNote("I1", good("A2", "M2"),
                 "data stored in the common data model with declared data types; "
                 "inputs are machine-readable tables (A2, M2 at least high)"),
        FairNote("I2", good("M1", "E1"),
                 "features and categorical values mapped to shared ontologies that answer "
                 "label queries (M1, E1 at least high)"),
        FairNote("I3", full("E5", "E6", "E7"),
                 "every record carries resolvable hospital, patient and feature references and its "
                 "source dataset (E5-E7 full); references to metadata in a catalog are not covered"),
    ]


@dataclass
class InteropReport:
    hospital: str
    metrics: list[MetricResult]
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    fair: list[FairNote] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [m.id for m in self.metrics]
        if sorted(ids) != sorted(METRIC_IDS):
            raise ValueError(f"report needs exactly the metrics {METRIC_IDS}, got {ids}")
        order = {m: i for i, m in enumerate(METRIC_IDS)}
        self.metrics = sorted(self.metrics, key=lambda m: order[m.id])
        if not self.fair:
            self.fair = fair_notes(self.by_id)

    @property
    def by_id(self) -> dict[str, MetricResult]:
        return {m.id: m for m in self.metrics}

    def __getitem__(self, metric_id: str) -> MetricResult:
        return self.by_id[metric_id]

    def to_dict(self) -> dict:
        return {
            "layoutVersion": REPORT_VERSION,
            "hospital": self.hospital,
            "timestamp": self.timestamp,
            "metrics": [m.to_dict() for m in self.metrics],
            "fair": [{"principle": n.principle, "passed": n.passed, "rationale": n.rationale} for n in self.fair],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteropReport":
        return cls(
            hospital=d["hospital"],
            metrics=[MetricResult.from_dict(m) for m in d["metrics"]],
            timestamp=d["timestamp"],
            fair=[FairNote(n["principle"], n["passed"], n["rationale"]) for n in d.get("fair", [])],
            notes=list(d.get("notes", [])),
        )

    def __eq__(self, other):
        return isinstance(other, InteropReport) and self.to_dict() == other.to_dict()


def na_metrics(ids: Iterable[str]) -> list[MetricResult]:
    return [MetricResult(i, 0, 0) for i in ids]


def metric_row(m: MetricResult) -> str:
    total = "N/A" if m.denominator == 0 else f"{m.denominator:,}"
    score = "N/A" if m.score is None else f"{m.display} ({m.level})"
    return f"{m.id:<7}{total:>9}  {score:<9}"


def render_report(r: InteropReport, mode: str = "human") -> str:
    if mode == "machine":
        return json.dumps(r.to_dict(), indent=2) + "\n"
    if mode != "human":
        raise ValueError(f"unknown report mode {mode!r}")
    lines = [f"Interoperability report for {r.hospital} ({r.timestamp})", "",
             f"{'metric':<7}{'total':>9}  {'score':<9} description"]
    for m in r.metrics:
        lines.append(f"{metric_row(m)} {DESCRIPTIONS[m.id]}")
    lines.append("")
    for n in r.fair:
        lines.append(f"{n.principle}: {'pass' if n.passed else 'fail'} - {n.rationale}")
    for note in r.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def parse_machine_report(text: str) -> InteropReport:
    return InteropReport.from_dict(json.loads(text))
