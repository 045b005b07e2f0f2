"""Interoperability-aware ETL of heterogeneous health data into a common data model."""

from .cdm import DataType, Feature, OntologyResource, Record, Visibility
from .metrics import InteropReport, MetricResult, render_report
from .pipeline import RunManifest, load_manifest, preflight, report_from_store, run_etl

__version__ = "0.1.0"

__all__ = [
    "DataType",
    "Feature",
    "InteropReport",
    "MetricResult",
    "OntologyResource",
    "Record",
    "RunManifest",
    "Visibility",
    "load_manifest",
    "preflight",
    "render_report",
    "report_from_store",
    "run_etl",
]
