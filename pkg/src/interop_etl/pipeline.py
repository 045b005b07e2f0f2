"""Run manifests and the end-to-end Extract, Transform, Load and metrics pipeline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .cdm import Hospital, feature_collection, hospital_identifier, next_identifier, parse_kind, record_collection
from .errors import ManifestError, MetadataError, UserError
from .ingest import DatasetDescriptor, RawTable, candidate_feature_count, read_tabular, top_k_union_filter
from .metadata import Diagnostic, FeatureSpec, gene_feature_specs, materialize_feature, parse_metadata, resource_requests
from .metrics import (
    InteropReport,
    MetricResult,
    metric_A1,
    metric_A2,
    metrics_E,
    metrics_M,
    na_metrics,
    recompute_E,
)
from .store import Store, init_store, open_store
from .terminology import (
    CompositeLabelSource,
    NullLabelSource,
    OntologyRegistry,
    RemoteLabelSource,
    Resolver,
    StaticLabelSource,
)
from .transform import DEFAULT_CONFIG, TransformConfig, TransformLog, build_patients, build_records

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
REPORT_FILE = "interop-report.json"
_TOP_KEYS = {"version", "hospital", "metadata", "store", "report", "datasets", "ontology", "transform"}
_DATASET_KEYS = {"name", "path", "kind", "patientIdColumn", "sampleIdColumn", "artifactPathColumn",
                 "requiresDedicatedExtraction", "topK", "geneFeatures"}
_TRANSFORM_KEYS = {"dateFormats": "date_formats", "datetimeFormats": "datetime_formats",
                   "emptyMarkers": "empty_markers", "trueTokens": "true_tokens",
                   "falseTokens": "false_tokens", "genomicTopK": "genomic_top_k"}


@dataclass
class OntologyConfig:
    systems: dict[str, str] = field(default_factory=dict)
    labels_file: Optional[Path] = None
    remote: Optional[dict] = None
    concurrency: int = 4

    def registry(self) -> OntologyRegistry:
        return OntologyRegistry(self.systems)

    def resolver(self) -> Resolver:
        reg = self.registry()
        sources = []
        if self.labels_file is not None:
            sources.append(StaticLabelSource.from_tsv(self.labels_file, reg))
        if self.remote:
            sources.append(RemoteLabelSource.from_config(self.remote))
        if not sources:
            source = NullLabelSource()
        elif len(sources) == 1:
            source = sources[0]
        else:
            source = CompositeLabelSource(*sources)
        return Resolver(source, concurrency=self.concurrency)


@dataclass
class RunManifest:
    hospital: str
    metadata: Path
    datasets: list[DatasetDescriptor]
    store: Path
    report: Optional[Path] = None
    ontology: OntologyConfig = field(default_factory=OntologyConfig)
    transform: TransformConfig = DEFAULT_CONFIG
    gene_ontology: dict[str, str] = field(default_factory=dict)  # dataset name -> ontology for generated gene features

    @property
    def report_path(self) -> Path:
        return self.report if self.report is not None else self.store.parent / REPORT_FILE


def _require(d: dict, key: str, where: str):
    if key not in d or d[key] in (None, ""):
        raise ManifestError(f"{where}: missing required key {key!r}")
    return d[key]


def _check_keys(d: dict, allowed: set, where: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ManifestError(f"{where}: unknown key(s) {', '.join(map(repr, extra))}")


def _opt_str(d: dict, key: str) -> Optional[str]:
    v = d.get(key)
    return None if v in (None, "") else str(v)


def manifest_from_dict(raw: Any, base: Path) -> RunManifest:
    """Build a manifest from its parsed document; relative paths resolve against ``base``."""
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a mapping")
    _check_keys(raw, _TOP_KEYS, "manifest")
    if raw.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"manifest: unsupported version {raw.get('version')!r} (expected {MANIFEST_VERSION})")

    def path(v) -> Path:
        p = Path(str(v)).expanduser()
        return p if p.is_absolute() else base / p

    hospital = str(_require(raw, "hospital", "manifest")).strip()
    if not hospital or ":" in hospital:
        raise ManifestError(f"manifest: invalid hospital name {hospital!r}")
    datasets_raw = raw.get("datasets") or []
    if not isinstance(datasets_raw, list) or not datasets_raw:
        raise ManifestError("manifest: at least one dataset is required")

    datasets, gene_ontology, names = [], {}, set()
    for i, d in enumerate(datasets_raw, start=1):
        where = f"dataset {i}"
        if not isinstance(d, dict):
            raise ManifestError(f"{where}: must be a mapping")
        _check_keys(d, _DATASET_KEYS, where)
        name = str(_require(d, "name", where))
        if name in names:
            raise ManifestError(f"{where}: duplicate dataset name {name!r}")
        names.add(name)
        top_k = d.get("topK")
        if top_k is not None and (not isinstance(top_k, int) or top_k < 1):
            raise ManifestError(f"{where}: topK must be a positive integer")
        try:
            kind = parse_kind(str(_require(d, "kind", where)))
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}") from None
        datasets.append(DatasetDescriptor(
            name=name,
            path=path(_require(d, "path", where)),
            kind=kind,
            patient_id_column=str(_require(d, "patientIdColumn", where)),
            sample_id_column=_opt_str(d, "sampleIdColumn"),
            artifact_path_column=_opt_str(d, "artifactPathColumn"),
            requires_dedicated_extraction=bool(d.get("requiresDedicatedExtraction", False)),
            top_k=top_k,
        ))
        gf = d.get("geneFeatures")
        if gf:
            gene_ontology[name] = gf.get("ontology", "hgnc") if isinstance(gf, dict) else "hgnc"

    onto_raw = raw.get("ontology") or {}
    if not isinstance(onto_raw, dict):
        raise ManifestError("ontology: must be a mapping")
    _check_keys(onto_raw, {"systems", "labels", "concurrency"}, "ontology")
    labels = onto_raw.get("labels") or {}
    _check_keys(labels, {"static", "remote"}, "ontology.labels")
    remote = labels.get("remote")
    if remote is not None and (not isinstance(remote, dict) or "urlTemplate" not in remote):
        raise ManifestError("ontology.labels.remote: needs urlTemplate")
    ontology = OntologyConfig(
        systems={str(k): str(v) for k, v in (onto_raw.get("systems") or {}).items()},
        labels_file=path(labels["static"]) if labels.get("static") else None,
        remote=remote,
        concurrency=int(onto_raw.get("concurrency", 4)),
    )

    tr_raw = raw.get("transform") or {}
    _check_keys(tr_raw, set(_TRANSFORM_KEYS), "transform")
    kwargs = {}
    for key, attr in _TRANSFORM_KEYS.items():
        if key not in tr_raw:
            continue
        v = tr_raw[key]
        if attr == "genomic_top_k":
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ManifestError("transform.genomicTopK must be a positive integer")
            kwargs[attr] = v
        elif attr == "empty_markers":
            kwargs[attr] = frozenset(str(x).strip().lower() for x in v)
        else:
            kwargs[attr] = tuple(str(x) for x in v)
    return RunManifest(
        hospital=hospital,
        metadata=path(_require(raw, "metadata", "manifest")),
        datasets=datasets,
        store=path(_require(raw, "store", "manifest")),
        report=path(raw["report"]) if raw.get("report") else None,
        ontology=ontology,
        transform=TransformConfig(**kwargs),
        gene_ontology=gene_ontology,
    )


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ManifestError(f"manifest {path} does not parse: {exc}") from None
    return manifest_from_dict(raw, path.parent.resolve())


# -- pre-flight ---------------------------------------------------------------------

@dataclass
class Preflight:
    manifest: RunManifest
    specs: list[FeatureSpec]
    tables: list[RawTable]
    diagnostics: list[Diagnostic]
    candidates: int
    selected: int
    data_metrics: list[MetricResult]

    @property
    def summary(self) -> str:
        return f"{len(self.specs)} features, {len(self.tables)} datasets"


def _top_k(d: DatasetDescriptor, config: TransformConfig) -> Optional[int]:
    if d.top_k is not None:
        return d.top_k
    return config.genomic_top_k if d.kind == "genomic" else None


def preflight(m: RunManifest) -> Preflight:
    """Parse metadata and datasets, filter, and check joinability. Writes nothing."""
    if not m.metadata.is_file():
        raise MetadataError(f"metadata file {m.metadata} does not exist")
    specs, diags = parse_metadata(m.metadata)
    fatal = [d for d in diags if d.fatal]
    if fatal:
        raise MetadataError("; ".join(str(d) for d in fatal))
    if m.ontology.labels_file is not None and not m.ontology.labels_file.is_file():
        raise ManifestError(f"label table {m.ontology.labels_file} does not exist")

    raw_tables = [read_tabular(d) for d in m.datasets]
    candidates = candidate_feature_count(raw_tables)
    tables = []
    for t in raw_tables:
        k = _top_k(t.descriptor, m.transform)
        if k is not None:
            kept = top_k_union_filter(t, k, m.transform.empty_markers)
            logger.info("%s: kept %d of %d columns with top-%d", t.descriptor.name, len(kept),
                        len(t.data_columns()), k)
            t = t.select(kept)
        tables.append(t)

    known = {(s.kind, s.name) for s in specs}
    for t in tables:
        onto = m.gene_ontology.get(t.descriptor.name)
        if onto is not None:
            extra = [g for g in t.data_columns() if (t.descriptor.kind, g) not in known]
            generated = gene_feature_specs(extra, ontology=onto)
            for s in generated:
                s.kind = t.descriptor.kind
            specs.extend(generated)
            known.update((s.kind, s.name) for s in generated)

    selected = 0
    for t in tables:
        d = t.descriptor
        selected += len(d.reserved_columns)
        unjoined = [c for c in t.data_columns() if (d.kind, c) not in known]
        selected += len(t.data_columns()) - len(unjoined)
        if unjoined:
            diags.append(Diagnostic(f"dataset {d.name!r}: {len(unjoined)} column(s) without a feature: "
                                    + ", ".join(unjoined[:10]) + (" ..." if len(unjoined) > 10 else "")))
    columns = {(t.descriptor.kind, c.strip()) for t in tables for c in t.header}
    orphan = [s.name for s in specs if (s.kind, s.name) not in columns]
    if orphan:
        diags.append(Diagnostic(f"{len(orphan)} feature(s) without a dataset column: " + ", ".join(orphan[:10])))

    no_extraction = sum(1 for d in m.datasets if not d.requires_dedicated_extraction)
    data_metrics = [metric_A1(selected, candidates), metric_A2(no_extraction, len(m.datasets))]
    return Preflight(m, specs, tables, diags, candidates, selected, data_metrics + metrics_M(specs))


# -- ETL ------------------------------------------------------------------------------

@dataclass
class EtlResult:
    report: InteropReport
    inserted: dict[str, int]
    counts: dict[str, int]
    log: TransformLog
    preflight: Preflight

    @property
    def total_inserted(self) -> int:
        return sum(self.inserted.values())


def _identifier_specs(tables: list[RawTable]) -> set[tuple[str, str]]:
    return {(t.descriptor.kind, c.strip()) for t in tables for c in t.descriptor.reserved_columns}


def run_etl(m: RunManifest, pre: Optional[Preflight] = None) -> EtlResult:
    pre = pre or preflight(m)
    store = init_store(m.store)
    try:
        result = _run(m, pre, store)
    except UserError:
        store.save()
        raise
    except Exception as exc:
        store.mark_dirty(f"run aborted: {type(exc).__name__}: {exc}")
        store.save()
        raise
    return result


def _run(m: RunManifest, pre: Preflight, store: Store) -> EtlResult:
    hospital = Hospital(hospital_identifier(m.hospital), m.hospital)
    registry = m.ontology.registry()
    resolver = m.ontology.resolver()

    # Transform step 1: patients
    _, new_patients = build_patients(pre.tables, hospital, store.aliases, store.counters)

    # Transform step 2: features, versioned by content
    skip = _identifier_specs(pre.tables)
    specs = [s for s in pre.specs if (s.kind, s.name) not in skip]
    resolver.resolve_many(p for s in specs for p in resource_requests(s, registry))
    features, new_features = {}, []
    for s in specs:
        f = materialize_feature(s, "", resolver, registry)
        found = store.find_feature(f.to_doc())
        if found is None:
            f.identifier = next_identifier("feature", store.counters)
            new_features.append(f)
        else:
            f.identifier = found
        features[(f.kind, f.name)] = f

    # Transform step 3: records
    log = TransformLog()
    for t in sorted(pre.tables, key=lambda t: t.descriptor.name):
        build_records(t, features, store.aliases, hospital, store.counters, m.transform,
                      store.record_keys, log)

    # Load
    inserted: dict[str, int] = {}
    store.mark_dirty("run in progress")
    inserted["hospital"] = store.insert_many("hospital", [hospital.to_doc()])
    inserted["patient"] = store.insert_many("patient", [p.to_doc() for p in new_patients])
    for coll in sorted({feature_collection(f.kind) for f in new_features}):
        inserted[coll] = store.insert_many(coll, [f.to_doc() for f in new_features
                                                  if feature_collection(f.kind) == coll])
    by_coll: dict[str, list] = {}
    for r in log.new_records:
        by_coll.setdefault(record_collection(r.kind), []).append(r.to_doc())
    for coll in sorted(by_coll):
        inserted[coll] = store.insert_many(coll, by_coll[coll])
    stats = store.build_indexes()

    # Metrics
    all_features = list(features.values())
    e_metrics = metrics_E(all_features, log.records, store.resolve_ref)
    total = sum(inserted.values())
    notes = [
        f"{total} inserted",
        f"A1 = (identifier and artifact columns + columns joined to a feature after filtering) / "
        f"all columns of all datasets = {pre.selected}/{pre.candidates}",
        f"{len(log.records)} records produced, {len(log.new_records)} new",
    ]
    e3 = next(x for x in e_metrics if x.id == "E3")
    if e3.denominator:
        notes.append(f"E3: {e3.note}")
    if log.suppressed:
        notes.append(f"{len(log.suppressed)} anonymized date value(s) could not be cast and were not stored")
    if log.missing_patient_rows:
        notes.append(f"{len(log.missing_patient_rows)} row(s) without a patient id skipped")
    for name, cols in sorted(log.skipped_columns.items()):
        notes.append(f"dataset {name}: {len(cols)} column(s) without a feature skipped")
    if stats.unresolved:
        notes.append("unresolved references: " + ", ".join(f"{k} x{len(v)}" for k, v in sorted(stats.unresolved.items())))
    report = InteropReport(m.hospital, pre.data_metrics + e_metrics, notes=notes)

    if stats.unresolved:
        store.manifest["dirtyReasons"] = ["unresolved references after load"]
    else:
        store.mark_clean()
    store.record_run({"hospital": m.hospital, "inserted": inserted, "records": len(log.records),
                      "newPatients": len(new_patients), "newFeatures": len(new_features)})
    store.manifest["lastReport"] = report.to_dict()
    store.save()
    m.report_path.parent.mkdir(parents=True, exist_ok=True)
    m.report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EtlResult(report, inserted, store.counts(), log, pre)


# -- reporting on an existing store -------------------------------------------------------

@dataclass
class StoreReport:
    report: InteropReport
    stored: Optional[InteropReport]
    divergent: list[str]
    dirty: bool


def report_from_store(root) -> StoreReport:
    """Data and metadata metrics from the last run; ETL metrics recomputed from the documents."""
    store = open_store(root)
    stored = InteropReport.from_dict(store.manifest["lastReport"]) if store.manifest.get("lastReport") else None
    e_metrics = recompute_E(store)
    if stored is not None:
        head = [m for m in stored.metrics if not m.id.startswith("E")]
        hospital = stored.hospital
    else:
        head = na_metrics(("A1", "A2", "M1", "M2", "M3", "M4", "M5"))
        hospital = next((d["name"] for d in store.docs("hospital")), "unknown")
    divergent = []
    if stored is not None:
        for e in e_metrics:
            s = stored[e.id]
            if (s.numerator, s.denominator) != (e.numerator, e.denominator):
                divergent.append(f"{e.id}: stored {s.numerator}/{s.denominator}, recomputed {e.numerator}/{e.denominator}")
    notes = []
    if store.dirty:
        notes.append("store is marked dirty: " + "; ".join(store.manifest.get("dirtyReasons") or ["unknown reason"]))
    modified = store.modified_collections()
    if modified:
        notes.append("collections changed since the last save: " + ", ".join(modified))
    notes += [f"divergence {d}" for d in divergent]
    report = InteropReport(hospital, head + e_metrics, notes=notes)
    return StoreReport(report, stored, divergent, store.dirty)
