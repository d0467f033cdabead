import itertools

import pytest
from hypothesis import given, settings, strategies as st

from textmdd.metrics import (
    GAP,
    MddCounts,
    align_pair,
    align_triple,
    edit_distance,
    percent,
    phone_error_rate,
    rates,
    score_triples,
    tally,
)
from textmdd.oracles import recursive_edit_distance

a, b, c, d, e, x = "abcdex"
seqs = st.lists(st.sampled_from("abc"), max_size=7)


def strip(row):
    return [v for v in row if v is not GAP]


def test_align_identical():
    al = align_pair([a, b, c], [a, b, c])
    assert al.distance == 0 and al.ops == ["match"] * 3


def test_align_substitution():
    al = align_pair([a, b, c], [a, d, c])
    assert al.distance == 1 and al.ops == ["match", "sub", "match"]


def test_align_deletion_picks_leftmost():
    al = align_pair([a, b], [b])
    assert al.distance == 1
    assert al.columns == [(a, GAP), (b, b)]


def test_align_equal_cost_gap_goes_left():
    # [a,a] vs [a]: both deletions are minimal; the traceback keeps the last match
    assert align_pair([a, a], [a]).columns == [(a, GAP), (a, a)]
    assert align_pair([a], [a, a]).columns == [(GAP, a), (a, a)]


def test_align_empty():
    assert align_pair([], []).columns == []
    assert align_pair([a, b], []).ops == ["del", "del"]
    assert align_pair([], [a]).ops == ["ins"]


def test_align_exhaustive_small():
    for n in range(4):
        for m in range(4):
            for s in itertools.product("ab", repeat=n):
                for t in itertools.product("ab", repeat=m):
                    assert edit_distance(s, t) == recursive_edit_distance(s, t)


@settings(max_examples=200)
@given(seqs, seqs)
def test_align_columns_recover_inputs(s, t):
    al = align_pair(s, t)
    assert [p for p, _ in al.columns if p is not GAP] == s
    assert [q for _, q in al.columns if q is not GAP] == t
    assert al.distance == sum(op != "match" for op in al.ops)
    assert al == align_pair(s, t)


def test_triple_all_equal():
    assert align_triple([a, b], [a, b], [a, b]) == [(a, a, a), (b, b, b)]


def test_triple_substitution_column():
    cols = align_triple([a, b, c], [a, d, c], [a, d, c])
    assert cols[1] == (b, d, d)


def test_triple_annotation_deletion_zips_with_insertion():
    cols = align_triple([a, b, c], [a, c], [a, x, c])
    assert cols == [(a, a, a), (b, GAP, x), (c, c, c)]


def test_triple_annotation_deletion_recognized():
    cols = align_triple([a, b, c], [a, c], [a, c])
    assert cols == [(a, a, a), (b, GAP, GAP), (c, c, c)]
    assert tally(cols) == MddCounts(ta=2, tr_correct_diag=1)


def test_triple_hypothesis_only_insertion():
    cols = align_triple([a, b], [a, b], [a, x, b])
    assert cols == [(a, a, a), (GAP, GAP, x), (b, b, b)]
    assert tally(cols) == MddCounts(ta=2, insertions=1)


def test_triple_hypothesis_deletion():
    cols = align_triple([a, b], [a, b], [a])
    assert cols == [(a, a, a), (b, b, GAP)]
    assert tally(cols) == MddCounts(ta=1, fr=1)


@settings(max_examples=200)
@given(seqs, seqs, seqs)
def test_triple_rows_recover_inputs(cs, an, hy):
    cols = align_triple(cs, an, hy)
    assert strip(col[0] for col in cols) == cs
    assert strip(col[1] for col in cols) == an
    assert strip(col[2] for col in cols) == hy
    assert all(col != (GAP, GAP, GAP) for col in cols)
    assert cols == align_triple(cs, an, hy)


@pytest.mark.parametrize(
    "col, field",
    [((b, d, d), "tr_correct_diag"), ((b, d, b), "fa"), ((b, d, e), "tr_diag_error"),
     ((b, b, b), "ta"), ((b, b, e), "fr"), ((b, GAP, b), "fa"), ((GAP, b, b), "tr_correct_diag")],
)
def test_tally_single_columns(col, field):
    counts = tally([col])
    assert getattr(counts, field) == 1
    assert sum(counts.as_tuple()) == 1


@settings(max_examples=200)
@given(seqs, seqs, seqs)
def test_tally_conservation(cs, an, hy):
    cols = align_triple(cs, an, hy)
    counts = tally(cols)
    ref_cols = [col for col in cols if col[:2] != (GAP, GAP)]
    same = sum(col[0] == col[1] for col in ref_cols)
    assert counts.n_canonical_correct == same
    assert counts.n_mispronounced == len(ref_cols) - same


@settings(max_examples=200)
@given(seqs, seqs)
def test_tally_hypothesis_equals_annotation(cs, an):
    counts = tally(align_triple(cs, an, an))
    assert counts.fr == counts.fa == counts.tr_diag_error == 0


def test_rates_published_rows():
    r = rates(MddCounts(ta=24172, fr=1574, fa=1826, tr_correct_diag=1667, tr_diag_error=766))
    assert percent(r.f1) == "58.87"
    r = rates(MddCounts(ta=24152, fr=1594, fa=1645, tr_correct_diag=1858, tr_diag_error=756))
    assert percent(r.f1) == "61.75"
    assert percent(r.correct_diagnosis_rate) == "71.08"
    assert not r.degenerate


def test_rates_all_zero_degenerate():
    r = rates(MddCounts())
    assert r.degenerate
    assert r.precision == r.recall == r.f1 == r.correct_diagnosis_rate == 0.0


@settings(max_examples=100)
@given(st.tuples(*[st.integers(0, 500)] * 5), st.integers(1, 50))
def test_rates_scale_invariant(vals, k):
    r1 = rates(MddCounts(*vals))
    r2 = rates(MddCounts(*(k * v for v in vals)))
    for name, v in r1.to_dict().items():
        assert v == pytest.approx(getattr(r2, name), abs=1e-12)


def test_f1_formula():
    r = rates(MddCounts(ta=10, fr=3, fa=2, tr_correct_diag=4, tr_diag_error=1))
    assert r.precision == 5 / 8 and r.recall == 5 / 7
    assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_percent_rounds_half_up():
    assert percent(0.123450) == "12.35"
    assert percent(0.0) == "0.00"
    assert percent(1.0) == "100.00"


def test_phone_error_rate_examples():
    assert phone_error_rate([a, b, c], [a, b, c]) == 0.0
    assert phone_error_rate([a, b, c], [a, c]) == pytest.approx(1 / 3)
    assert phone_error_rate([a, b, c], []) == 1.0
    assert phone_error_rate([], []) == 0.0


def test_score_triples_aggregates():
    counts, edits, ref_len = score_triples([([a, b], [a, d], [a, d]), ([c], [c], [e])])
    assert counts == MddCounts(ta=1, fr=1, tr_correct_diag=1)
    assert (edits, ref_len) == (1, 3)
    assert score_triples([]) == (MddCounts(), 0, 0)


def test_counts_addition():
    s = MddCounts(1, 2, 3, 4, 5, 6) + MddCounts(1, 1, 1, 1, 1, 1)
    assert s.as_tuple() == (2, 3, 4, 5, 6, 7)
    assert s.tr == 11
