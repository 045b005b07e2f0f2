import pytest
from hypothesis import given, strategies as st

from interop_etl.cdm import DataType, Visibility
from interop_etl.errors import MetadataError
from interop_etl.metadata import (
    COLUMNS,
    FeatureSpec,
    materialize_feature,
    parse_categories,
    parse_metadata_text,
    serialize_categories,
    serialize_metadata,
)
from interop_etl.terminology import OntologyRegistry, Resolver, StaticLabelSource

HEADER = ",".join(COLUMNS) + "\n"


def parse(rows: str):
    return parse_metadata_text(HEADER + rows, "meta.csv")


def test_sex_row_with_categories():
    specs, diags = parse('snomed ct,734000001,sex,phenotypic,category,,"female=snomed ct:248152002;male=snomed ct:248153007",public\n')
    assert diags == []
    (s,) = specs
    assert s.mapped and s.data_type is DataType.CATEGORY
    assert s.categories == {"female": ("snomed ct", "248152002"), "male": ("snomed ct", "248153007")}


def test_header_any_order_and_case():
    header = "Name,Kind,dataType,Ontology,Code,Unit,Categories,Visibility\n"
    specs, _ = parse_metadata_text(header + "age,phenotypic,integer,snomed ct,397669002,years,,public\n")
    assert specs[0].unit == "years" and specs[0].code == "397669002"


def test_missing_column_is_named():
    with pytest.raises(MetadataError, match="'code'"):
        parse_metadata_text("ontology,name,kind,dataType,unit,categories,visibility\n")


def test_extra_column_rejected():
    with pytest.raises(MetadataError, match="comment"):
        parse_metadata_text(HEADER.strip() + ",comment\n")


def test_absent_cells_and_optional_fields():
    specs, _ = parse("-,,note,clinical,,,,\n")
    s = specs[0]
    assert not s.mapped and s.data_type is None and s.visibility is None


def test_bad_rows_and_repairs():
    specs, diags = parse(
        "x,1,a,clinical,colour,,,public\n"      # bad dataType: skipped
        "x,2,b,clinical,string,mg,,public\n"    # unit dropped
        "x,3,c,clinical,integer,,a=x:1,public\n"  # categories dropped
        "x,4,b,clinical,string,,,public\n"      # duplicate
        "x,5,d,clinical,string,,,hidden\n"      # bad visibility: skipped
    )
    assert [s.name for s in specs] == ["b", "c"]
    assert specs[0].unit is None and specs[1].categories_raw is None
    assert len(diags) == 5 and not any(d.fatal for d in diags)


def test_category_grammar():
    cats = parse_categories(r"Yes=http://snomed.info/sct:373066001; no ;a\;b=loinc:1\:2;Yes=x:1")
    assert cats == {"yes": ("http://snomed.info/sct", "373066001"), "no": None, "a;b": ("loinc", "1:2")}


def test_category_problems_reported():
    problems = []
    parse_categories("a=nocode;=x:1", problems)
    assert len(problems) == 2


_token = st.text(st.characters(blacklist_categories=("Cs", "Cc"), blacklist_characters="\r\n"), min_size=1, max_size=6)
_key = _token.map(lambda t: t.strip().lower()).filter(bool)


@given(st.dictionaries(_key, st.none() | st.tuples(_token.map(str.strip).filter(bool), _token.map(str.strip).filter(bool)), max_size=4))
def test_category_round_trip(cats):
    assert parse_categories(serialize_categories(cats)) == cats


def test_metadata_round_trip():
    specs = [
        FeatureSpec("sex", "phenotypic", "snomed ct", "734000001", DataType.CATEGORY, None,
                    "female=snomed ct:248152002", Visibility.PUBLIC),
        FeatureSpec("calc_age", "phenotypic", "snomed ct", "397669002", DataType.INTEGER, "years", None,
                    Visibility.ANONYMIZED),
        FeatureSpec("free, text", "clinical"),
    ]
    again, diags = parse_metadata_text(serialize_metadata(specs))
    assert again == specs and diags == []


def test_materialize_feature_resolves_labels():
    reg = OntologyRegistry()
    src = StaticLabelSource([("snomed ct", "248152002", "Female"), ("snomed ct", "734000001", "Sex")], reg)
    spec = FeatureSpec("sex", "phenotypic", "SNOMED-CT", "734000001", DataType.CATEGORY, None,
                       "female=snomed ct:248152002;other", None)
    f = materialize_feature(spec, "Feature:1", Resolver(src), reg)
    assert f.ontology_resource.system == "http://snomed.info/sct"
    assert f.ontology_resource.label == "Sex"
    assert f.categories["female"].label == "Female" and f.categories["other"] is None
    assert f.visibility is Visibility.PRIVATE
