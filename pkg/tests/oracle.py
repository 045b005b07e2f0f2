"""Naive re-derivation of record counts and ETL metrics straight from the input files.

Deliberately shares no code with the transform module: the casting rules
are restated here in their simplest form.
"""
import csv
import re
from datetime import datetime
from fractions import Fraction

import yaml

EMPTY = {"", "na", "n/a", "null", "none", "-"}
TRUE = {"true", "yes", "y", "1"}
FALSE = {"false", "no", "n", "0"}
DATE_FORMATS = ["%Y-%m-%d", "%d/%m/%Y", "%m/%d/%Y"]
DATETIME_FORMATS = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M",
                    "%d/%m/%Y %H:%M:%S", "%d/%m/%Y %H:%M", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M"]
NUMBER_UNIT = re.compile(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(.*?)\s*$")


def is_empty(cell):
    return cell.strip().lower() in EMPTY


def parses(text, formats):
    for f in formats:
        try:
            datetime.strptime(text.strip(), f)
            return True
        except ValueError:
            pass
    return False


def read_rows(path, delimiter=","):
    with open(path, newline="", encoding="utf-8-sig") as fh:
        return list(csv.reader(fh, delimiter=delimiter))


def read_metadata(path):
    rows = read_rows(path)
    head = [h.strip().lower() for h in rows[0]]
    out = {}
    for r in rows[1:]:
        d = {h: (v.strip() if v.strip() not in ("", "-") else None) for h, v in zip(head, r)}
        key = (d["kind"].strip().lower(), d["name"])
        if key in out:
            continue
        cats = {}
        if d["categories"] and (d["datatype"] or "").lower() == "category":
            for entry in d["categories"].split(";"):
                value, _, res = entry.partition("=")
                cats[value.strip().lower()] = res.strip() or None
        d["cats"] = cats
        out[key] = d
    return out


def cell_outcome(cell, spec):
    """(stored?, succeeded, unit matched or None, category found or None)."""
    dt = (spec["datatype"] or "").lower()
    unit = spec["unit"]
    declared = bool(unit) and unit.upper() != "NONE"
    anonymized = (spec["visibility"] or "").lower() in ("anonymized", "anonymize")
    if dt == "string":
        return True, True, None, None
    if dt == "boolean":
        return True, cell.strip().lower() in TRUE | FALSE, None, None
    if dt in ("date", "datetime"):
        ok = parses(cell, DATE_FORMATS if dt == "date" else DATETIME_FORMATS)
        return (ok or not anonymized), ok, None, None
    if dt in ("integer", "numeric"):
        m = NUMBER_UNIT.match(cell)
        if not m:
            return True, False, (False if declared else None), None
        number, tail = m.group(1), m.group(2)
        if tail and not (declared and tail.lower() == unit.lower()):
            return True, False, (False if declared else None), None
        matched = bool(tail) if declared else None
        if dt == "integer":
            ok = re.fullmatch(r"[+-]?\d+", number) is not None
        else:
            ok = True
        return True, ok, matched, None
    if dt == "category":
        found = cell.strip().lower() in spec["cats"]
        return True, found, None, found
    return True, False, None, None


def top_k_union(header, rows, id_cols, k):
    genes = [h for h in header if h.strip() not in id_cols]
    idx = [header.index(g) for g in genes]
    keep = set()
    for r in rows:
        vals = [(int(r[i]), g) for i, g in zip(idx, genes) if not is_empty(r[i])]
        if not vals:
            continue
        ordered = sorted((v for v, _ in vals), reverse=True)
        threshold = ordered[min(k, len(ordered)) - 1]
        keep |= {g for v, g in vals if v >= threshold}
    return keep


def derive(manifest_path):
    """Expected records and E-metric ratios for a run manifest."""
    from pathlib import Path

    base = Path(manifest_path).parent
    m = yaml.safe_load(Path(manifest_path).read_text())
    specs = read_metadata(base / m["metadata"])
    labels = {}
    static = m.get("ontology", {}).get("labels", {}).get("static")
    if static:
        for r in read_rows(base / static, "\t")[1:]:
            labels[(r[0].strip().lower(), r[1].strip())] = r[2].strip()
    k_default = m.get("transform", {}).get("genomicTopK")

    n = ok = 0
    unit_num = unit_den = cat_num = cat_den = 0
    per_feature = {}
    for d in m["datasets"]:
        rows = read_rows(base / d["path"])
        header, body = rows[0], [r for r in rows[1:] if r]
        id_cols = {c for c in (d.get("patientIdColumn"), d.get("sampleIdColumn"), d.get("artifactPathColumn")) if c}
        kind = d["kind"].strip().lower()
        cols = [h.strip() for h in header if h.strip() not in id_cols]
        k = d.get("topK") or (k_default if kind == "genomic" else None)
        if k:
            kept = top_k_union(header, body, id_cols, k)
            cols = [c for c in cols if c in kept]
        for c in cols:
            spec = specs.get((kind, c))
            if spec is None and d.get("geneFeatures"):
                spec = {"datatype": "integer", "unit": None, "visibility": "public", "cats": {}}
            if spec is None:
                continue
            i = [h.strip() for h in header].index(c)
            for r in body:
                if is_empty(r[i]):
                    continue
                stored, succeeded, matched, found = cell_outcome(r[i], spec)
                if not stored:
                    continue
                n += 1
                per_feature[(kind, c)] = per_feature.get((kind, c), 0) + 1
                ok += succeeded
                declared = bool(spec["unit"]) and spec["unit"].upper() != "NONE"
                if (spec["datatype"] or "").lower() in ("integer", "numeric") and declared:
                    unit_den += 1
                    unit_num += bool(matched)
                if (spec["datatype"] or "").lower() == "category":
                    cat_den += 1
                    cat_num += bool(found)

    resources = labeled = 0
    reserved = {(d["kind"].strip().lower(), c) for d in m["datasets"]
                for c in (d.get("patientIdColumn"), d.get("sampleIdColumn"), d.get("artifactPathColumn")) if c}
    for key, spec in specs.items():
        if key in reserved:
            continue
        pairs = []
        if spec["ontology"] and spec["code"]:
            pairs.append((spec["ontology"].lower(), spec["code"]))
        for res in spec["cats"].values():
            if res:
                system, _, code = res.partition(":")
                pairs.append((system.strip().lower(), code.strip()))
        resources += len(pairs)
        labeled += sum(1 for p in pairs if labels.get(p))

    def ratio(a, b):
        return (a, b)

    return {
        "E1": ratio(labeled, resources),
        "records": n,
        "per_feature": per_feature,
        "E2": ratio(ok, n),
        "E3": ratio(unit_num, unit_den),
        "E4": ratio(cat_num, cat_den),
        "E5": ratio(n, n),
        "E6": ratio(n, n),
        "E7": ratio(n, n),
    }


def score(pair):
    a, b = pair
    return Fraction(a, b) if b else None
