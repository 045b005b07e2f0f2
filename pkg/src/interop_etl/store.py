"""Load step: a file-backed document store.

Layout under the store root::

    manifest.json            counters, run history, checksums, last report
    hospital.jsonl           one JSON document per line, canonical key order
    patient.jsonl
    feature-<kind>.jsonl
    record-<kind>.jsonl
    indexes/<collection>.json
    aliases.local.json       source patient id -> anonymized id; never exported

Documents are only ever appended. A single process owns the store while
loading; readers may open it afterwards.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .cdm import AliasTable, CounterState, content_key
from .errors import StoreAccessError, StoreError

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1
MANIFEST = "manifest.json"
ALIASES = "aliases.local.json"
INDEX_DIR = "indexes"
REF_FIELDS = ("hospitalRef", "patientRef", "featureRef")
_REF_COLLECTIONS = {"hospital": "hospital", "patient": "patient", "feature": "feature-"}


def canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def feature_content(doc: dict) -> str:
    return canonical({k: v for k, v in doc.items() if k != "identifier"})


def record_key_from_doc(doc: dict, occurrence: int) -> str:
    return content_key(doc["patientRef"], doc["featureRef"], doc["dataset"], doc["value"],
                       doc.get("baseId"), occurrence)


def _record_base(doc: dict) -> tuple:
    return (doc["patientRef"], doc["featureRef"], doc["dataset"],
            json.dumps(doc["value"], sort_keys=True), doc.get("baseId"))


@dataclass
class IndexStats:
    entries: dict[str, dict[str, int]] = field(default_factory=dict)
    unresolved: dict[str, list[str]] = field(default_factory=dict)

    def keys(self, collection: str, name: str) -> int:
        return self.entries.get(collection, {}).get(name, 0)


class Store:
    def __init__(self, root: Path, manifest: dict, aliases: AliasTable):
        self.root = root
        self.manifest = manifest
        self.counters = CounterState(dict(manifest["counters"]))
        self.aliases = aliases
        self.last_skipped = 0
        self._ids: dict[str, dict[str, int]] = {}
        self._lines: dict[str, int] = {}
        self.record_keys: dict[str, str] = {}
        self.feature_versions: dict[tuple[str, str, str], str] = {}
        self._scan()

    # -- reading -------------------------------------------------------------

    def _path(self, collection: str) -> Path:
        if "/" in collection or collection.startswith("."):
            raise StoreError(f"invalid collection name {collection!r}")
        return self.root / f"{collection}.jsonl"

    def collections(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.jsonl"))

    def docs(self, collection: str) -> Iterator[dict]:
        path = self._path(collection)
        if not path.exists():
            return
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    raise StoreError(f"corrupt store: {path.name} line {lineno} is not JSON") from None

    def count(self, collection: str) -> int:
        return len(self._ids.get(collection, {}))

    def counts(self) -> dict[str, int]:
        return {c: self.count(c) for c in self.collections()}

    def _scan(self):
        for coll in self.collections():
            ids: dict[str, int] = {}
            occurrences: Counter = Counter()
            for n, doc in enumerate(self.docs(coll)):
                ids[doc["identifier"]] = n
                if coll.startswith("record-"):
                    base = _record_base(doc)
                    occurrences[base] += 1
                    self.record_keys[record_key_from_doc(doc, occurrences[base])] = doc["identifier"]
                elif coll.startswith("feature-"):
                    self.feature_versions[(doc["kind"], doc["name"], feature_content(doc))] = doc["identifier"]
            self._ids[coll] = ids
            self._lines[coll] = len(ids)

    def has(self, collection: str, identifier: str) -> bool:
        return identifier in self._ids.get(collection, {})

    def find_feature(self, doc: dict) -> Optional[str]:
        """Identifier of a stored feature with exactly this content, if any."""
        return self.feature_versions.get((doc["kind"], doc["name"], feature_content(doc)))

    # -- writing -------------------------------------------------------------

    def insert_many(self, collection: str, docs: Iterable[dict]) -> int:
        ids = self._ids.setdefault(collection, {})
        inserted = skipped = 0
        fresh: list[dict] = []
        batch: set[str] = set()
        for doc in docs:
            ident = doc.get("identifier")
            if not ident:
                raise StoreError(f"document without identifier in {collection!r}")
            if ident in ids or ident in batch:
                skipped += 1
                continue
            batch.add(ident)
            fresh.append(doc)
        if fresh:
            try:
                with open(self._path(collection), "a", encoding="utf-8") as fh:
                    fh.write("".join(canonical(d) + "\n" for d in fresh))
            except OSError as exc:
                self.mark_dirty(f"write to {collection} failed: {exc}")
                raise StoreError(f"write to {collection} failed: {exc}") from exc
            line = self._lines.get(collection, 0)
            for doc in fresh:
                ids[doc["identifier"]] = line
                line += 1
                if collection.startswith("feature-"):
                    self.feature_versions[(doc["kind"], doc["name"], feature_content(doc))] = doc["identifier"]
            self._lines[collection] = line
            inserted = len(fresh)
        if skipped:
            logger.warning("%s: %d duplicate document(s) skipped", collection, skipped)
        self.last_skipped = skipped
        return inserted

    def build_indexes(self) -> IndexStats:
        stats = IndexStats()
        idx_dir = self.root / INDEX_DIR
        idx_dir.mkdir(exist_ok=True)
        for stale in idx_dir.glob("*.json"):
            if stale.stem not in self.collections():
                stale.unlink()
        for coll in self.collections():
            index: dict[str, dict] = {"identifier": {}}
            is_record = coll.startswith("record-")
            if is_record:
                for f in REF_FIELDS:
                    index[f] = defaultdict(list)
            for n, doc in enumerate(self.docs(coll)):
                index["identifier"][doc["identifier"]] = n
                if is_record:
                    for f, ref_kind in zip(REF_FIELDS, ("hospital", "patient", "feature")):
                        ref = doc.get(f)
                        index[f][ref].append(doc["identifier"])
                        if not self.resolve_ref(ref_kind, ref):
                            stats.unresolved.setdefault(f, []).append(doc["identifier"])
            (idx_dir / f"{coll}.json").write_text(canonical(index), encoding="utf-8")
            stats.entries[coll] = {k: len(v) for k, v in index.items()}
        return stats

    def resolve_ref(self, ref_kind: str, identifier) -> bool:
        if not isinstance(identifier, str):
            return False
        prefix = _REF_COLLECTIONS[ref_kind]
        if ref_kind == "feature":
            return any(identifier in ids for c, ids in self._ids.items() if c.startswith(prefix))
        return identifier in self._ids.get(prefix, {})

    # -- manifest ------------------------------------------------------------

    @property
    def dirty(self) -> bool:
        return bool(self.manifest.get("dirty"))

    def mark_dirty(self, reason: str):
        self.manifest["dirty"] = True
        self.manifest.setdefault("dirtyReasons", []).append(reason)
        try:
            self._write_manifest()
        except OSError:
            logger.exception("could not persist dirty flag")

    def mark_clean(self):
        self.manifest["dirty"] = False
        self.manifest["dirtyReasons"] = []

    def checksum(self, collection: str) -> str:
        h = hashlib.sha256()
        path = self._path(collection)
        if path.exists():
            with open(path, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
        return h.hexdigest()

    def modified_collections(self) -> list[str]:
        """Collections whose bytes differ from the checksums of the last save."""
        recorded = self.manifest.get("checksums", {})
        current = set(self.collections()) | set(recorded)
        return sorted(c for c in current if recorded.get(c) != (self.checksum(c) if self._path(c).exists() else None))

    def _write_manifest(self):
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.root / MANIFEST)

    def save(self):
        self.manifest["counters"] = dict(self.counters.counts)
        self.manifest["checksums"] = {c: self.checksum(c) for c in self.collections()}
        self._write_manifest()
        tmp = self.root / (ALIASES + ".tmp")
        tmp.write_text(json.dumps(self.aliases.mapping, indent=0, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.root / ALIASES)

    def record_run(self, summary: dict):
        entry = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"), **summary}
        self.manifest.setdefault("runs", []).append(entry)

    def export(self, dest) -> Path:
        """Copy collections, indexes and manifest; the alias table stays behind."""
        dest = Path(dest)
        if dest.exists() and any(dest.iterdir()):
            raise StoreError(f"export destination {dest} is not empty")
        dest.mkdir(parents=True, exist_ok=True)
        for coll in self.collections():
            shutil.copy2(self._path(coll), dest / f"{coll}.jsonl")
        if (self.root / INDEX_DIR).is_dir():
            shutil.copytree(self.root / INDEX_DIR, dest / INDEX_DIR)
        shutil.copy2(self.root / MANIFEST, dest / MANIFEST)
        return dest


def _fresh_manifest() -> dict:
    return {
        "layoutVersion": LAYOUT_VERSION,
        "counters": {"patient": 0, "feature": 0, "record": 0},
        "dirty": False,
        "runs": [],
        "checksums": {},
    }


def init_store(root) -> Store:
    root = Path(root)
    if root.exists() and not root.is_dir():
        raise StoreAccessError(f"store root {root} is not a directory")
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        if root.exists() and any(p.name != ".gitkeep" for p in root.iterdir()):
            raise StoreAccessError(f"{root} is not empty and has no {MANIFEST}; refusing to use it as a store")
        root.mkdir(parents=True, exist_ok=True)
        store = Store(root, _fresh_manifest(), AliasTable())
        store.save()
        return store
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        counters = manifest["counters"]
        if manifest.get("layoutVersion") != LAYOUT_VERSION:
            raise ValueError(f"unsupported layoutVersion {manifest.get('layoutVersion')!r}")
        if not all(isinstance(counters.get(k), int) and counters[k] >= 0 for k in ("patient", "feature", "record")):
            raise ValueError("bad counters")
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise StoreAccessError(f"corrupt store at {root}: {exc}") from None
    alias_path = root / ALIASES
    mapping = {}
    if alias_path.exists():
        try:
            mapping = json.loads(alias_path.read_text(encoding="utf-8"))
        except ValueError:
            raise StoreAccessError(f"corrupt store at {root}: unreadable alias table") from None
    return Store(root, manifest, AliasTable(mapping))


def open_store(root) -> Store:
    """Open an existing store without creating one."""
    root = Path(root)
    if not (root / MANIFEST).exists():
        raise StoreAccessError(f"no store at {root}")
    return init_store(root)
