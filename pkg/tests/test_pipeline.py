import json

import pytest
import yaml

from interop_etl.errors import IngestError, ManifestError, MetadataError
from interop_etl.pipeline import load_manifest, manifest_from_dict, preflight, report_from_store, run_etl
from interop_etl.store import open_store
from interop_etl.synth import random_scenario


def edit_manifest(path, **changes):
    doc = yaml.safe_load(path.read_text())
    doc.update(changes)
    path.write_text(yaml.safe_dump(doc))
    return doc


def test_manifest_paths_resolve_relative(h2):
    m = load_manifest(h2.manifest_path)
    assert m.metadata == h2.root / "metadata.csv"
    assert m.report_path == h2.root / "interop-report.json"
    assert [d.kind for d in m.datasets][-1] == "clinical"


@pytest.mark.parametrize("raw,msg", [
    ({"version": 2}, "version"),
    ({"version": 1, "hospital": "H", "metadata": "m", "store": "s", "datasets": []}, "at least one dataset"),
    ({"version": 1, "hospital": "H", "metadata": "m", "store": "s", "extra": 1}, "unknown key"),
    ({"version": 1, "hospital": "H", "metadata": "m", "store": "s",
      "datasets": [{"name": "a", "path": "a", "kind": "clinical"}]}, "patientIdColumn"),
    ({"version": 1, "hospital": "H:1", "metadata": "m", "store": "s"}, "hospital"),
])
def test_manifest_errors(tmp_path, raw, msg):
    with pytest.raises(ManifestError, match=msg):
        manifest_from_dict(raw, tmp_path)


def test_preflight_h2(h2):
    pre = preflight(load_manifest(h2.manifest_path))
    assert pre.summary == "62 features, 5 datasets"
    assert (pre.selected, pre.candidates) == (60, 65)
    assert not (h2.root / "store").exists()


def test_preflight_errors(h2):
    text = (h2.root / "metadata.csv").read_text().replace("code,", "", 1)
    (h2.root / "metadata.csv").write_text(text)
    with pytest.raises(MetadataError, match="code"):
        preflight(load_manifest(h2.manifest_path))


def test_missing_dataset(h2):
    (h2.root / "imaging.csv").unlink()
    with pytest.raises(IngestError):
        preflight(load_manifest(h2.manifest_path))


def test_h2_counts_and_report_file(h2):
    res = run_etl(load_manifest(h2.manifest_path))
    exp = h2.expected
    for kind, n in exp["records_by_kind"].items():
        assert res.counts[f"record-{kind}"] == n
    for kind, n in exp["features_by_kind"].items():
        assert res.counts[f"feature-{kind}"] == n
    assert res.counts["patient"] == 111 and res.counts["hospital"] == 1
    saved = json.loads((h2.root / "interop-report.json").read_text())
    assert saved == res.report.to_dict()
    assert open_store(h2.root / "store").manifest["lastReport"] == saved
    assert res.report["E4"].denominator == exp["categorical_records"]


def test_runs_into_fresh_stores_are_byte_identical(tmp_path):
    a = random_scenario(tmp_path / "a", 11)
    b = random_scenario(tmp_path / "b", 11)
    run_etl(load_manifest(a.manifest_path))
    run_etl(load_manifest(b.manifest_path))
    files = sorted(p.name for p in (a.root / "store").glob("*.jsonl"))
    assert files
    for name in files:
        assert (a.root / "store" / name).read_bytes() == (b.root / "store" / name).read_bytes()


def test_changed_metadata_versions_feature(h2):
    m = load_manifest(h2.manifest_path)
    run_etl(m)
    text = (h2.root / "metadata.csv").read_text().replace("years", "yr")
    (h2.root / "metadata.csv").write_text(text)
    res = run_etl(load_manifest(h2.manifest_path))
    assert res.inserted.get("feature-phenotypic") == 1
    assert res.inserted.get("record-phenotypic") == 111
    assert res.counts["feature-phenotypic"] == 9


def test_integrity_failure_marks_dirty(h2, monkeypatch):
    from interop_etl import pipeline

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(pipeline.Store, "build_indexes", boom)
    with pytest.raises(RuntimeError):
        run_etl(load_manifest(h2.manifest_path))
    store = open_store(h2.root / "store")
    assert store.dirty
    # documents appended before the failure are recognized on the next run
    monkeypatch.undo()
    res = run_etl(load_manifest(h2.manifest_path))
    assert res.counts["record-clinical"] == 748
    assert not open_store(h2.root / "store").dirty


def test_report_from_store_flags_divergence(h2):
    run_etl(load_manifest(h2.manifest_path))
    clean = report_from_store(h2.root / "store")
    assert clean.divergent == [] and not clean.dirty
    assert all(clean.report[e].level == "F" for e in ("E5", "E6", "E7"))
    path = h2.root / "store" / "feature-imaging.jsonl"
    path.write_text("")
    broken = report_from_store(h2.root / "store")
    assert broken.report["E7"].numerator == 1957 - 70
    assert any(d.startswith("E7") for d in broken.divergent)
    assert any("feature-imaging" in n for n in broken.report.notes)


def test_empty_store_report_is_all_na(tmp_path):
    from interop_etl.store import init_store

    init_store(tmp_path / "s")
    r = report_from_store(tmp_path / "s").report
    assert all(m.level == "N/A" for m in r.metrics)
