import json

import pytest

from interop_etl.errors import StoreAccessError
from interop_etl.store import ALIASES, init_store, open_store


def docs(n, prefix="H:"):
    return [{"identifier": f"{prefix}{i}"} for i in range(1, n + 1)]


def test_fresh_store(tmp_path):
    s = init_store(tmp_path / "s")
    assert s.counters.counts == {"patient": 0, "feature": 0, "record": 0}
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["layoutVersion"] == 1


def test_bad_roots(tmp_path):
    f = tmp_path / "file"
    f.write_text("x")
    with pytest.raises(StoreAccessError):
        init_store(f)
    (tmp_path / "busy").mkdir()
    (tmp_path / "busy" / "other.txt").write_text("x")
    with pytest.raises(StoreAccessError):
        init_store(tmp_path / "busy")
    s = init_store(tmp_path / "c")
    (s.root / "manifest.json").write_text("{not json")
    with pytest.raises(StoreAccessError, match="corrupt store"):
        init_store(s.root)
    with pytest.raises(StoreAccessError):
        open_store(tmp_path / "missing")


def test_insert_skips_duplicates(tmp_path, caplog):
    s = init_store(tmp_path / "s")
    assert s.insert_many("patient", docs(111)) == 111
    assert s.insert_many("patient", docs(111)) == 0 and s.last_skipped == 111
    assert s.insert_many("patient", []) == 0
    assert "duplicate" in caplog.text


def test_counters_resume_and_durability(tmp_path):
    s = init_store(tmp_path / "s")
    s.counters.counts["record"] = 250103
    s.insert_many("hospital", [{"identifier": "Hospital:H", "name": "H", "é": "ü"}])
    s.save()
    before = {c: s.checksum(c) for c in s.collections()}
    again = open_store(tmp_path / "s")
    assert again.counters.counts["record"] == 250103
    assert {c: again.checksum(c) for c in again.collections()} == before
    assert again.modified_collections() == []


def test_indexes_and_unresolved_refs(tmp_path):
    s = init_store(tmp_path / "s")
    s.insert_many("hospital", [{"identifier": "Hospital:H"}])
    s.insert_many("patient", docs(2))
    s.insert_many("feature-clinical", [{"identifier": "Feature:1", "kind": "clinical", "name": "a"}])
    recs = [{"identifier": f"Record:{i}", "hospitalRef": "Hospital:H", "patientRef": "H:1",
             "featureRef": ref, "dataset": "d", "value": i} for i, ref in ((1, "Feature:1"), (2, "Feature:999"))]
    s.insert_many("record-clinical", recs)
    stats = s.build_indexes()
    assert stats.keys("record-clinical", "featureRef") == 2
    assert stats.unresolved == {"featureRef": ["Record:2"]}
    idx = json.loads((s.root / "indexes" / "record-clinical.json").read_text())
    assert idx["patientRef"] == {"H:1": ["Record:1", "Record:2"]}
    assert s.resolve_ref("patient", "H:1") and not s.resolve_ref("patient", "H:99999")
    assert s.resolve_ref("feature", "Feature:1") and not s.resolve_ref("feature", None)


def test_empty_store_indexes(tmp_path):
    assert init_store(tmp_path / "s").build_indexes().entries == {}


def test_export_leaves_aliases(tmp_path):
    s = init_store(tmp_path / "s")
    s.aliases.get_or_insert("MRN-1", lambda: "H:1")
    s.insert_many("patient", docs(1))
    s.build_indexes()
    s.save()
    assert (s.root / ALIASES).exists()
    out = s.export(tmp_path / "bundle")
    names = {p.name for p in out.rglob("*")}
    assert ALIASES not in names and "patient.jsonl" in names
    assert not any("MRN-1" in p.read_text() for p in out.rglob("*") if p.is_file())


def test_dirty_flag_persists(tmp_path):
    s = init_store(tmp_path / "s")
    s.mark_dirty("boom")
    assert open_store(s.root).dirty
