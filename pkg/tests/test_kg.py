import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgqa.kg import Fact, KGFormatError, TemporalKG, load_tkg, save_tkg


def small_kg():
    kg = TemporalKG(["A", "B", "C", "D"], ["r"], [1972, 1973, 1974, 1994])
    kg.facts = [Fact(0, 0, 1, 1972, 1974), Fact(0, 0, 2, 1994, 1994),
                Fact(3, 0, 1, None, None)]
    return kg


def test_load_single_line(tmp_path):
    p = tmp_path / "kg.tsv"
    p.write_text("A\twon\tB\t1972\t1972\n")
    kg = load_tkg(p)
    assert kg.num_entities == 2
    assert kg.num_relations == 1
    assert kg.years == [1972]
    assert kg.num_timestamps == 2  # year + NO_TIME sentinel
    assert kg.facts == [Fact(0, 0, 1, 1972, 1972)]


def test_load_no_time(tmp_path):
    p = tmp_path / "kg.tsv"
    p.write_text("A\tr\tB\tNO_TIME\tNO_TIME\n")
    kg = load_tkg(p)
    assert kg.facts[0].start is None and kg.facts[0].end is None
    assert not kg.facts[0].timed


def test_load_errors_with_line_numbers(tmp_path):
    p = tmp_path / "kg.tsv"
    p.write_text("A\tr\tB\t1972\t1972\nA\tr\tB\t1980\t1975\n")
    with pytest.raises(KGFormatError, match=":2"):
        load_tkg(p)
    p.write_text("A\tr\tB\t1972\n")
    with pytest.raises(KGFormatError, match="5 columns"):
        load_tkg(p)
    p.write_text("A\tr\tB\txyz\t1972\n")
    with pytest.raises(KGFormatError, match="non-integer"):
        load_tkg(p)


def test_roundtrip_and_dedupe(tmp_path):
    kg = small_kg()
    p = tmp_path / "kg.tsv"
    save_tkg(kg, p)
    back = load_tkg(p)
    assert back.facts == kg.facts
    assert back.entity_names == kg.entity_names
    # duplicate lines collapse
    p.write_text("A\tr\tB\t1972\t1972\nA\tr\tB\t1972\t1972\n")
    assert len(load_tkg(p).facts) == 1


def test_comments_skipped(tmp_path):
    p = tmp_path / "kg.tsv"
    p.write_text("# header\nA\tr\tB\t1972\t1972\n")
    assert len(load_tkg(p).facts) == 1


def test_expand_intervals():
    kg = small_kg()
    quads = kg.expand_intervals(10)
    years = [q.year for q in quads if q.subject == 0 and q.object == 1]
    assert years == [1972, 1973, 1974]
    assert sum(1 for q in quads if q.subject == 0 and q.object == 2) == 1
    assert [q for q in quads if q.year is None][0].subject == 3


def test_expand_interval_cap_keeps_earliest():
    kg = TemporalKG(["A", "B"], ["r"], list(range(1972, 1977)))
    kg.facts = [Fact(0, 0, 1, 1972, 1976)]
    quads = kg.expand_intervals(2)
    assert [q.year for q in quads] == [1972, 1973]


def test_expand_size_identity():
    kg = small_kg()
    for cap in (1, 2, 10):
        expect = sum(min(f.end - f.start + 1, cap) for f in kg.facts if f.timed)
        expect += sum(1 for f in kg.facts if not f.timed)
        assert len(kg.expand_intervals(cap)) == expect


def test_expand_cap_validation():
    with pytest.raises(ValueError):
        small_kg().expand_intervals(0)


def test_corrupt_p0_identity_p1_total():
    kg = small_kg()
    same = kg.corrupt_timestamps(0.0, seed=0)
    assert same.facts == kg.facts
    gone = kg.corrupt_timestamps(1.0, seed=0)
    assert all(not f.timed for f in gone.facts)


def test_corrupt_binomial_and_deterministic():
    kg = TemporalKG(["A", "B"], ["r"], [2000])
    kg.facts = [Fact(0, 0, 1, 2000, 2000) for _ in range(10000)]
    out = kg.corrupt_timestamps(0.5, seed=42)
    n = sum(1 for f in out.facts if not f.timed)
    assert abs(n - 5000) < 3 * np.sqrt(10000 * 0.25)
    again = kg.corrupt_timestamps(0.5, seed=42)
    assert again.facts == out.facts


def test_corrupt_preserves_triples():
    kg = small_kg()
    out = kg.corrupt_timestamps(0.7, seed=1)
    assert len(out.facts) == len(kg.facts)
    for a, b in zip(kg.facts, out.facts):
        assert (a.subject, a.relation, a.object) == (b.subject, b.relation, b.object)


def test_corrupt_p_validation():
    with pytest.raises(ValueError):
        small_kg().corrupt_timestamps(1.5, seed=0)


def test_facts_with_entities_modes():
    kg = small_kg()
    both = kg.facts_with_entities({0, 1}, mode="all")
    assert both == [Fact(0, 0, 1, 1972, 1974)]
    assert kg.facts_with_entities({0, 2}, mode="all") == [Fact(0, 0, 2, 1994, 1994)]
    assert len(kg.facts_with_entities({0}, mode="any")) == 2


def test_facts_with_entities_all_subset_of_any():
    kg = small_kg()
    for ids in ({0}, {0, 1}, {1, 3}):
        all_f = kg.facts_with_entities(ids, mode="all")
        any_f = kg.facts_with_entities(ids, mode="any")
        assert set(all_f) <= set(any_f)


def test_facts_with_entities_errors():
    kg = small_kg()
    with pytest.raises(KeyError):
        kg.facts_with_entities({99})
    with pytest.raises(ValueError):
        kg.facts_with_entities(set())


def test_year_id_sentinel():
    kg = small_kg()
    assert kg.year_id(None) == kg.no_time_id == len(kg.years)
    assert kg.year_id(1973) == 1


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_corrupt_count_and_tables_property(p, seed):
    kg = small_kg()
    out = kg.corrupt_timestamps(p, seed)
    assert len(out.facts) == len(kg.facts)
    assert out.entity_names == kg.entity_names
    assert out.years == kg.years
