"""Synthetic scenarios: metadata, datasets, label table and run manifest on disk."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .cdm import DataType, Visibility
from .metadata import FeatureSpec, serialize_categories, write_metadata

SNOMED = "snomed ct"


@dataclass
class Scenario:
    root: Path
    manifest_path: Path
    specs: list[FeatureSpec]
    expected: dict = field(default_factory=dict)


def _write_csv(path: Path, header: list[str], rows: list[list[str]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_labels(path: Path, rows: list[tuple[str, str, str]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["system", "code", "label"])
        w.writerows(rows)


def _write_manifest(root: Path, doc: dict) -> Path:
    path = root / "manifest.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return path


def _spec(name, kind, code=None, dt=DataType.STRING, unit=None, cats=None,
          vis=Visibility.PUBLIC, ontology=SNOMED) -> FeatureSpec:
    return FeatureSpec(
        name=name, kind=kind, ontology=ontology if code else None, code=code, data_type=dt,
        unit=unit, categories_raw=serialize_categories(cats) if cats else None, visibility=vis,
    )


def _labels_for(specs: list[FeatureSpec], skip: set = frozenset()) -> list[tuple[str, str, str]]:
    rows = []
    for s in specs:
        if s.mapped and (s.ontology, s.code) not in skip:
            rows.append((s.ontology, s.code, s.name.replace("_", " ")))
        for value, res in s.categories.items():
            if res is not None and res not in skip:
                rows.append((res[0], res[1], value))
    return list(dict.fromkeys(rows))


def _blank_cells(rng: random.Random, rows: list[list[str]], cols: list[int], keep: int):
    """Blank cells in ``cols`` so that exactly ``keep`` of them stay non-empty."""
    cells = [(r, c) for r in range(len(rows)) for c in cols]
    for r, c in rng.sample(cells, len(cells) - keep):
        rows[r][c] = ""


# -- H2-shaped scenario ------------------------------------------------------------

_YES_NO = {"yes": (SNOMED, "373066001"), "no": (SNOMED, "373067005")}
_PHENO_CATS = {
    "ethnicity": ("372148003", {"white": (SNOMED, "413773004"), "black": (SNOMED, "413464008"),
                                "asian": (SNOMED, "414978006"), "other": (SNOMED, "74964007")}),
    "sex": ("734000001", {"female": (SNOMED, "248152002"), "male": (SNOMED, "248153007")}),
    "ihd": ("414545008", _YES_NO),
    "previous_vte": ("429098002", _YES_NO),
    "copd": ("13645005", _YES_NO),
    "diabetes": ("73211009", _YES_NO),
    "smoking": ("229819007", {"never": (SNOMED, "266919005"), "ex": (SNOMED, "8517006"),
                              "current": (SNOMED, "77176002")}),
}
_ESKD = {"diabetic nephropathy": (SNOMED, "127013003"), "hypertension": (SNOMED, "38481006"),
         "glomerulonephritis": (SNOMED, "36171008"), "other": (SNOMED, "74964007")}
_WHO = {"mild": (SNOMED, "255604002"), "moderate": (SNOMED, "6736007"),
        "severe": (SNOMED, "24484000"), "critical": (SNOMED, "6471006")}
_ID_CODE = "422549004"


def h2_specs() -> list[FeatureSpec]:
    specs = [_spec("individual_id", "phenotypic", _ID_CODE)]
    for name in ("ethnicity", "sex"):
        code, cats = _PHENO_CATS[name]
        specs.append(_spec(name, "phenotypic", code, DataType.CATEGORY, cats=cats))
    specs.append(_spec("calc_age", "phenotypic", "397669002", DataType.INTEGER, unit="years",
                       vis=Visibility.ANONYMIZED))
    for name in ("ihd", "previous_vte", "copd", "diabetes", "smoking"):
        code, cats = _PHENO_CATS[name]
        specs.append(_spec(name, "phenotypic", code, DataType.CATEGORY, cats=cats))
    specs += [
        _spec("individual_id", "diagnosis", _ID_CODE),
        _spec("cause_eskd", "diagnosis", "46177005", DataType.CATEGORY, cats=_ESKD),
        _spec("WHO_severity", "diagnosis", "246112005", DataType.CATEGORY, cats=_WHO),
        _spec("fatal_disease", "diagnosis", "419620001", DataType.BOOLEAN),
        _spec("individual_id", "imaging", _ID_CODE),
        _spec("radiology_evidence_covid", "imaging", "840539006", DataType.CATEGORY, cats=_YES_NO),
        _spec("individual_id", "clinical", _ID_CODE),
        _spec("sample_id", "clinical", "372274003"),
    ]
    for i in range(45):
        if i >= 37:
            # populations with no single ontology concept
            name = f"Siglec-1+ NKG2D+ HLA-DR+ subset {i - 36}"
            specs.append(_spec(name, "clinical", None, DataType.NUMERIC, vis=Visibility.PRIVATE))
        else:
            specs.append(_spec(f"cell_population_{i + 1:02d}", "clinical", f"7{i + 1:05d}006",
                               DataType.NUMERIC, vis=Visibility.PRIVATE))
    return specs


def h2_scenario(root, seed: int = 2) -> Scenario:
    """Five datasets, 62 metadata rows and 111 patients in the H2 layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    specs = h2_specs()
    write_metadata(specs, root / "metadata.csv")
    _write_labels(root / "labels.tsv", _labels_for(specs))
    ids = [f"P{n:04d}" for n in range(1, 112)]

    def pick(cats):
        key = rng.choice(sorted(cats))
        return rng.choice([key, key.upper(), key.capitalize(), f" {key} "])

    # phenotypic: 8 features, fully populated, one column left out of the metadata
    names = ["ethnicity", "sex", "calc_age", "ihd", "previous_vte", "copd", "diabetes", "smoking"]
    rows = []
    for pid in ids:
        row = [pid]
        for n in names:
            row.append(str(rng.randint(25, 90)) if n == "calc_age" else pick(_PHENO_CATS[n][1]))
        row.append(rng.choice(["north", "south"]))
        rows.append(row)
    _write_csv(root / "phenotypic.csv", ["individual_id"] + names + ["recruitment_site"], rows)

    # diagnosis: cause_eskd full, WHO_severity and fatal_disease on 70 patients each
    rows = []
    for pid in ids:
        rows.append([pid, pick(_ESKD), pick(_WHO), rng.choice(["yes", "no", "TRUE", "false"]),
                     pick(_WHO), f"{rng.randint(0, 23):02d}:00", f"{rng.randint(0, 23):02d}:30"])
    _blank_cells(rng, rows, [2], 70)
    _blank_cells(rng, rows, [3], 70)
    _write_csv(root / "diagnosis.csv",
               ["individual_id", "cause_eskd", "WHO_severity", "fatal_disease", "WHO_temp_severity",
                "time_from_first_symptoms", "time_from_first_positive_swab"], rows)

    # imaging: one feature on 70 patients
    rows = [[pid, pick(_YES_NO)] for pid in ids]
    _blank_cells(rng, rows, [1], 70)
    _write_csv(root / "imaging.csv", ["individual_id", "radiology_evidence_covid"], rows)

    # clinical: two cytometry panels; 4 clinical features have no column
    clinical = [s.name for s in specs if s.kind == "clinical" and s.data_type is DataType.NUMERIC]
    panel_a, panel_b = clinical[:22], clinical[22:41]
    rows = [[pid, f"S{n:03d}"] + [f"{rng.uniform(0, 60):.2f}" for _ in panel_a]
            for n, pid in enumerate(ids[:20], start=1)]
    _write_csv(root / "cytometry_a.csv", ["individual_id", "sample_id"] + panel_a, rows)
    rows = [[pid, f"S{n:03d}"] + [f"{rng.uniform(0, 60):.2f}" for _ in panel_b] + [f"B{rng.randint(1, 3)}"]
            for n, pid in enumerate(ids[20:37], start=21)]
    _blank_cells(rng, rows, list(range(2, 2 + len(panel_b))), 308)
    _write_csv(root / "cytometry_b.csv", ["individual_id", "sample_id"] + panel_b + ["acquisition_batch"], rows)

    def ds(name, kind, sample=None):
        d = {"name": name, "path": f"{name}.csv", "kind": kind, "patientIdColumn": "individual_id"}
        if sample:
            d["sampleIdColumn"] = sample
        return d

    manifest = _write_manifest(root, {
        "version": 1,
        "hospital": "H2",
        "metadata": "metadata.csv",
        "store": "store",
        "report": "interop-report.json",
        "ontology": {"labels": {"static": "labels.tsv"}},
        "datasets": [ds("phenotypic", "phenotypic"), ds("diagnosis", "diagnosis"), ds("imaging", "imaging"),
                     ds("cytometry_a", "clinical", "sample_id"), ds("cytometry_b", "clinical", "sample_id")],
    })
    expected = {
        "patients": 111, "features": 57, "records": 1957,
        "records_by_kind": {"phenotypic": 888, "clinical": 748, "diagnosis": 251, "imaging": 70},
        "features_by_kind": {"phenotypic": 8, "clinical": 45, "diagnosis": 3, "imaging": 1},
        "selected": 60, "candidates": 65, "categorical_records": 1028,
    }
    return Scenario(root, manifest, specs, expected)


# -- genomic-scale scenario -----------------------------------------------------------

def genomic_scenario(root, n_patients: int = 111, n_genes: int = 3000, k: int = 1000,
                     seed: int = 1, sparsity: float = 0.05, unlabeled_every: int = 100) -> Scenario:
    """A wide expression-count table; gene features are generated for the genes kept by the filter."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    genes = [f"ENSG{n:011d}.{1 + n % 13}" for n in range(1, n_genes + 1)]
    # per-gene expression level plus per-cell noise; small values tie often
    level = rng.lognormal(2.0, 1.5, size=n_genes)
    noise = rng.lognormal(0.0, 0.6, size=(n_patients, n_genes))
    counts = rng.poisson(level * noise)
    empty = rng.random((n_patients, n_genes)) < sparsity
    header = ["Sample_ID"] + genes
    with open(root / "genomic.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in range(n_patients):
            cells = np.where(empty[p], "", counts[p].astype(str))
            w.writerow([f"G{p + 1:04d}"] + cells.tolist())
    (root / "metadata.csv").write_text(",".join(
        ("ontology", "code", "name", "kind", "dataType", "unit", "categories", "visibility")) + "\n",
        encoding="utf-8")
    labels = [("ensembl", g.rsplit(".", 1)[0], f"gene {n}") for n, g in enumerate(genes, start=1)
              if n % unlabeled_every]
    _write_labels(root / "labels.tsv", labels)
    manifest = _write_manifest(root, {
        "version": 1,
        "hospital": "H1",
        "metadata": "metadata.csv",
        "store": "store",
        "ontology": {"systems": {"ensembl": "https://www.ensembl.org"}, "labels": {"static": "labels.tsv"}},
        "transform": {"genomicTopK": k},
        "datasets": [{"name": "genomic", "path": "genomic.csv", "kind": "genomic",
                      "patientIdColumn": "Sample_ID", "geneFeatures": {"ontology": "ensembl"}}],
    })
    return Scenario(root, manifest, [], {"patients": n_patients, "genes": n_genes, "k": k})


# -- random scenarios --------------------------------------------------------------------

_KINDS = ("phenotypic", "clinical", "diagnosis", "medicine", "imaging")
_UNITS = ("mg", "kg", "years", "mmol/l")


def _random_value(rng: random.Random, s: FeatureSpec) -> str:
    dt = s.data_type
    roll = rng.random()
    if roll < 0.12:
        return rng.choice(["", "NA", " ", "null", "-"])
    if roll < 0.2:
        return rng.choice(["tru", "purple", "3 months", "01/13/2021 25:00", "x1", "n.a."])
    if dt is DataType.BOOLEAN:
        return rng.choice(["yes", "No", "TRUE", "false", "1", "0", " y "])
    if dt is DataType.INTEGER or dt is DataType.NUMERIC:
        num = str(rng.randint(-5, 500)) if dt is DataType.INTEGER or rng.random() < 0.3 else f"{rng.uniform(0, 99):.3f}"
        if s.unit and s.unit != "NONE" and rng.random() < 0.5:
            return f"{num}{rng.choice(['', ' '])}{rng.choice([s.unit, s.unit.upper()])}"
        return num
    if dt is DataType.CATEGORY:
        return rng.choice(list(s.categories) + ["unknown"]).upper() if rng.random() < 0.3 else rng.choice(list(s.categories))
    if dt is DataType.DATE:
        y, m, d = rng.randint(1930, 2023), rng.randint(1, 12), rng.randint(1, 28)
        return rng.choice([f"{y}-{m:02d}-{d:02d}", f"{d:02d}/{m:02d}/{y}"])
    if dt is DataType.DATETIME:
        y, m, d = rng.randint(1990, 2023), rng.randint(1, 12), rng.randint(1, 28)
        return f"{y}-{m:02d}-{d:02d}T{rng.randint(0, 23):02d}:{rng.randint(0, 59):02d}:{rng.randint(0, 59):02d}"
    return rng.choice(["  Foo ", "BAR", "baz qux", "Mixed Case"])


def random_specs(rng: random.Random, n_features: int) -> list[FeatureSpec]:
    specs = []
    for i in range(n_features):
        kind = rng.choice(_KINDS)
        dt = rng.choice(list(DataType) + [None])
        cats = None
        if dt is DataType.CATEGORY:
            cats = {}
            for j in range(rng.randint(1, 4)):
                cats[f"c{j}"] = (SNOMED, f"{900 + j}") if rng.random() < 0.8 else None
        unit = None
        if dt is not None and dt.is_numeric:
            unit = rng.choice([None, "NONE"] + list(_UNITS))
        vis = rng.choice([None, Visibility.PUBLIC, Visibility.PRIVATE, Visibility.ANONYMIZED, Visibility.ANONYMIZED])
        code = str(100000 + i) if rng.random() < 0.8 else None
        s = _spec(f"f{i}", kind, code, dt, unit, cats, vis)
        specs.append(s)
    return specs


def random_scenario(root, seed: int, n_features: Optional[int] = None,
                    n_patients: Optional[int] = None) -> Scenario:
    """Up to 20 features over up to 50 patients, with messy values, empties and a few broken labels."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    n_features = n_features or rng.randint(1, 20)
    n_patients = n_patients or rng.randint(1, 50)
    specs = random_specs(rng, n_features)
    write_metadata(specs, root / "metadata.csv")
    unlabeled = {(SNOMED, "901")} if rng.random() < 0.5 else set()
    _write_labels(root / "labels.tsv", _labels_for(specs, unlabeled))

    datasets = []
    ids = [f"R{n:03d}" for n in range(1, n_patients + 1)]
    for kind in sorted({s.kind for s in specs}):
        kspecs = [s for s in specs if s.kind == kind]
        rng.shuffle(kspecs)
        patients = [p for p in ids if rng.random() < 0.8] or ids[:1]
        header = ["pid"] + [s.name for s in kspecs] + (["unmapped_col"] if rng.random() < 0.3 else [])
        rows = []
        for p in patients:
            for _ in range(rng.choice([1, 1, 1, 2])):
                rows.append([p] + [_random_value(rng, s) for s in kspecs] + [str(rng.random())] * (len(header) - 1 - len(kspecs)))
        name = f"{kind}_data"
        _write_csv(root / f"{name}.csv", header, rows)
        datasets.append({"name": name, "path": f"{name}.csv", "kind": kind, "patientIdColumn": "pid",
                         "requiresDedicatedExtraction": rng.random() < 0.2})
    manifest = _write_manifest(root, {
        "version": 1,
        "hospital": f"R{seed}",
        "metadata": "metadata.csv",
        "store": "store",
        "ontology": {"labels": {"static": "labels.tsv"}},
        "datasets": datasets,
    })
    return Scenario(root, manifest, specs, {"patients_max": n_patients})
