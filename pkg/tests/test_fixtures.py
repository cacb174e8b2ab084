from collections import Counter

from cmta.corpus import MisinfoClass, SplitSpec, split_dataset
from cmta.fixtures import (
    COMPARISON_SPECS,
    FILLERS,
    MARKERS,
    TABLE1_TOTAL,
    SyntheticSpec,
    gen_corpus,
    gen_synthetic,
    rule_oracle,
    table1_fixture,
)
from cmta.preprocess import StopwordTable, clean_text


def test_counts_and_balance():
    recs = gen_synthetic(SyntheticSpec(languages=("en", "fr"), per_cell=4))
    assert len(recs) == 24
    assert set(Counter((r.language, r.gold_class) for r in recs).values()) == {4}


def test_deterministic():
    spec = SyntheticSpec(languages=("ja", "th", "hi"), per_cell=5, seed=9)
    assert gen_synthetic(spec) == gen_synthetic(spec)
    assert gen_synthetic(spec) != gen_synthetic(SyntheticSpec(languages=("ja", "th", "hi"), per_cell=5, seed=10))
    assert gen_corpus(50, seed=1) == gen_corpus(50, seed=1)


def test_rule_oracle_is_perfect():
    recs = gen_synthetic(SyntheticSpec(languages=tuple(FILLERS), per_cell=20, seed=2))
    assert all(rule_oracle(r.raw_text) is r.gold_class for r in recs)
    # markers survive cleaning, so the classes stay separable after preprocessing
    table = StopwordTable.default()
    assert all(rule_oracle(clean_text(r.raw_text, r.language, table).text) is r.gold_class for r in recs)


def test_markers_disjoint_from_fillers():
    marker_words = {w for ws in MARKERS.values() for w in ws}
    assert not marker_words & {w for ws in FILLERS.values() for w in ws}


def test_table1_fixture():
    recs = table1_fixture()
    assert len(recs) == TABLE1_TOTAL == 9502
    en_false = Counter(r.source for r in recs if r.language == "en" and r.gold_class is MisinfoClass.FALSE)
    assert en_false == {"poynter": 2869, "checkworthy-tweets": 500}
    es = Counter(r.gold_class for r in recs if r.language == "es")
    assert es == {MisinfoClass.FALSE: 191, MisinfoClass.PARTIALLY_FALSE: 161, MisinfoClass.MISLEADING: 179}
    assert len({r.id for r in recs}) == 9502
    tr, va, te = split_dataset(recs, SplitSpec(seed=0))
    assert (len(tr), len(va), len(te)) == (7602, 950, 950)


def test_comparison_spec_rows():
    assert len(COMPARISON_SPECS) == 9
    assert COMPARISON_SPECS[-1] == ("CMTA", "multilingual")
    assert len({lang for _, lang in COMPARISON_SPECS[:-1]}) == 8
