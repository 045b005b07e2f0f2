import csv
import io

import pytest
from hypothesis import given, settings, strategies as st

from interop_etl.errors import IngestError
from interop_etl.ingest import (
    DatasetDescriptor,
    RawTable,
    candidate_feature_count,
    detect_empty,
    read_tabular,
    strip_gene_version,
    top_k_union_filter,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return DatasetDescriptor(name=name, path=p, kind="clinical", patient_id_column="pid")


def table(rows, header=None):
    header = header or ["pid"] + [f"g{i}" for i in range(len(rows[0]))]
    d = DatasetDescriptor("t", "t.csv", "genomic", "pid")
    return RawTable(d, tuple(header), tuple(tuple([f"p{n}"] + [str(v) for v in r]) for n, r in enumerate(rows)))


def test_read_verbatim(tmp_path):
    text = 'pid,a,b\n1,"  x ",NA\n2,"q,""r""",\n'
    t = read_tabular(write(tmp_path, "d.csv", text))
    assert t.rows == (("1", "  x ", "NA"), ("2", 'q,"r"', ""))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([t.header, *t.rows])
    assert list(csv.reader(io.StringIO(buf.getvalue()))) == list(csv.reader(io.StringIO(text)))


def test_header_only_and_errors(tmp_path):
    assert read_tabular(write(tmp_path, "h.csv", "pid,a\n")).rows == ()
    with pytest.raises(IngestError, match="ragged row 2"):
        read_tabular(write(tmp_path, "r.csv", "pid,a\n1,2\n3\n"))
    with pytest.raises(IngestError, match="patient id column"):
        read_tabular(write(tmp_path, "m.csv", "id,a\n1,2\n"))
    with pytest.raises(IngestError, match="duplicate column"):
        read_tabular(write(tmp_path, "u.csv", "pid,a,a \n1,2,3\n"))
    with pytest.raises(IngestError, match="does not exist"):
        read_tabular(DatasetDescriptor("x", tmp_path / "nope.csv", "clinical", "pid"))


def test_detect_empty():
    assert all(detect_empty(c) for c in ["", "  ", "NA", "n/a", "Null", "-"])
    assert not detect_empty("0")
    assert detect_empty("missing", {"missing"})


@pytest.mark.parametrize("name,code", [("ENSG00000250433.1", "ENSG00000250433"),
                                        ("ENSG00000115902.11", "ENSG00000115902"), ("BRCA2", "BRCA2")])
def test_strip_gene_version(name, code):
    assert strip_gene_version(name) == code


def test_top_k_examples():
    t = table([[5, 1, 3]], ["pid", "g1", "g2", "g3"])
    assert top_k_union_filter(t, 2) == {"g1", "g3"}
    t = table([[4, 4]], ["pid", "g1", "g2"])
    assert top_k_union_filter(t, 1) == {"g1", "g2"}
    t = table([[9, 0, 0], [0, 0, 9]], ["pid", "a", "b", "c"])
    assert top_k_union_filter(t, 1) == {"a", "c"}


def test_top_k_empty_and_bad_cells():
    t = table([["", "3", "NA"]], ["pid", "a", "b", "c"])
    assert top_k_union_filter(t, 1) == {"b"}
    with pytest.raises(IngestError, match="non-integer"):
        top_k_union_filter(table([["x", "1"]]), 1)
    with pytest.raises(ValueError):
        top_k_union_filter(table([[1]]), 0)


def brute_force(rows, k):
    keep = set()
    for r in rows:
        vals = sorted(r, reverse=True)
        if not vals:
            continue
        threshold = vals[min(k, len(vals)) - 1]
        keep |= {f"g{i}" for i, v in enumerate(r) if v >= threshold}
    return keep


_matrix = st.integers(1, 20).flatmap(
    lambda w: st.lists(st.lists(st.integers(0, 6), min_size=w, max_size=w), min_size=1, max_size=10))


@settings(max_examples=300)
@given(_matrix, st.integers(1, 21))
def test_top_k_matches_brute_force_and_is_monotone(rows, k):
    t = table(rows)
    got = top_k_union_filter(t, k)
    assert got == brute_force(rows, k)
    assert got <= top_k_union_filter(t, k + 1)


def test_candidate_count_counts_every_column():
    a = table([[1, 2, 3]])
    b = table([[1, 2, 3, 4]])
    assert candidate_feature_count([a, b]) == 9
    assert candidate_feature_count([table([[]], ["pid"])]) == 1
