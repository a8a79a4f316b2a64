import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_lcs
from rxdistill.errors import EmptyInput, IdMismatch, LengthMismatch
from rxdistill.metrics import evaluate_run, f1_selection, lcs_length, rouge_l, rouge_n, rouge_text

T = str.split


@pytest.mark.parametrize("cand,ref,n,p,r,f", [
    ("the cat sat", "the cat ran", 1, 2 / 3, 2 / 3, 2 / 3),
    ("the cat sat on the mat", "the cat on the mat", 2, 3 / 5, 3 / 4, 2 / 3),
    ("the the the", "the cat", 1, 1 / 3, 1 / 2, 0.4),
    ("a b", "a b", 2, 1.0, 1.0, 1.0),
    ("a", "a b", 2, 0.0, 0.0, 0.0),
    ("x y", "z w", 1, 0.0, 0.0, 0.0),
])
def test_rouge_n_fixtures(cand, ref, n, p, r, f):
    got = rouge_n(T(cand), T(ref), n)
    assert (got.precision, got.recall, got.f1) == pytest.approx((p, r, f), abs=1e-15)


@pytest.mark.parametrize("cand,ref,p,r,f", [
    ("a b c d", "a c d", 3 / 4, 1.0, 6 / 7),
    ("a b c", "c b a", 1 / 3, 1 / 3, 1 / 3),
    ("x y", "z w", 0.0, 0.0, 0.0),
    ("q r s", "q r s", 1.0, 1.0, 1.0),
    ("a x b y c", "a b c", 3 / 5, 1.0, 3 / 4),
])
def test_rouge_l_fixtures(cand, ref, p, r, f):
    got = rouge_l(T(cand), T(ref))
    assert (got.precision, got.recall, got.f1) == pytest.approx((p, r, f), abs=1e-15)


def test_rouge_n_bad_order():
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 3)


def test_f1_fixtures():
    rep = f1_selection([1, 1, 2, 2], [1, 2, 2, 2], positive=2)
    assert (rep.tp, rep.fp, rep.fn, rep.tn) == (2, 0, 1, 1)
    assert (rep.precision, rep.recall, rep.f1) == pytest.approx((1.0, 2 / 3, 0.8))
    rep1 = f1_selection([1, 1, 2, 2], [1, 2, 2, 2], positive=1)
    assert (rep1.precision, rep1.recall, rep1.f1) == pytest.approx((0.5, 1.0, 2 / 3))
    assert rep1.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2)
    assert f1_selection([2, 2, 2], [1, 1, 2], positive=1).f1 == 0.0
    assert f1_selection([1, 2, 1], [1, 2, 1]).f1 == 1.0
    with pytest.raises(LengthMismatch):
        f1_selection([1], [1, 2])
    with pytest.raises(EmptyInput):
        f1_selection([], [])


labels = st.lists(st.sampled_from([1, 2]), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(labels, st.data())
def test_f1_relabel_invariance(preds, data):
    refs = data.draw(st.lists(st.sampled_from([1, 2]), min_size=len(preds), max_size=len(preds)))
    swap = lambda xs: [3 - x for x in xs]
    a = f1_selection(preds, refs, 1)
    b = f1_selection(swap(preds), swap(refs), 2)
    assert (a.precision, a.recall, a.f1, a.tp, a.fp, a.fn) == (b.precision, b.recall, b.f1, b.tp, b.fp, b.fn)


tokens = st.lists(st.sampled_from(list("abcde")), max_size=10)


@settings(max_examples=400, deadline=None)
@given(tokens, tokens)
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == brute_lcs(a, b)


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_rouge_bounded(a, b):
    for s in (rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)):
        assert 0.0 <= s.precision <= 1.0 and 0.0 <= s.recall <= 1.0 and 0.0 <= s.f1 <= 1.0


@settings(max_examples=200, deadline=None)
@given(tokens, st.sampled_from([1, 2]))
def test_rouge_self_is_one(x, n):
    if len(x) >= n:
        assert rouge_n(x, x, n).f1 == 1.0
    if x:
        assert rouge_l(x, x).f1 == 1.0


def test_rouge_text_uses_tokenizer():
    rep = rouge_text("The Cat, sat!", "the cat ran")
    assert rep.rouge_1.f1 == pytest.approx(2 / 3)


def _rows(pairs, selected=None):
    labeled = [{"id": f"r{i}", "label": 1 + i % 2, "teacher": {"selected": 1 + i % 2, "rationale": ref}}
               for i, (_, ref) in enumerate(pairs)]
    outs = [{"id": f"r{i}", "selected": (selected or (lambda i: 1 + i % 2))(i), "rationale": cand}
            for i, (cand, _) in enumerate(pairs)]
    return labeled, outs


def test_echo_student_scores_one():
    labeled, outs = _rows([("aa bb cc", "aa bb cc"), ("dd ee", "dd ee")])
    rep = evaluate_run(labeled, outs)
    assert rep["selection_vs_teacher"]["f1"] == 1.0
    assert all(rep["rouge"][k]["f1"] == 1.0 for k in ("rouge_1", "rouge_2", "rouge_l"))


def test_five_record_corpus_means():
    pairs = [("aa bb", "aa bb"), ("the cat sat", "the cat ran"), ("", "anything here"),
             ("xx yy", "zz"), ("the the the", "the cat")]
    labeled, outs = _rows(pairs)
    rep = evaluate_run(labeled, list(reversed(outs)))
    assert rep["rouge"]["rouge_1"]["f1"] == pytest.approx((1 + 2 / 3 + 0 + 0 + 0.4) / 5)
    assert rep["rouge"]["rouge_l"]["f1"] == pytest.approx((1 + 2 / 3 + 0 + 0 + 0.4) / 5)
    assert rep["rouge"]["rouge_2"]["f1"] == pytest.approx((1 + 1 / 2 + 0 + 0 + 0) / 5)


def test_empty_rationales_zero_rouge_f1_unaffected():
    labeled, outs = _rows([("", "aa bb"), ("", "cc dd")])
    rep = evaluate_run(labeled, outs)
    assert rep["rouge"]["rouge_1"]["f1"] == 0.0 and rep["selection_vs_teacher"]["f1"] == 1.0


def test_id_mismatch():
    labeled, outs = _rows([("aa", "aa"), ("bb", "bb")])
    with pytest.raises(IdMismatch):
        evaluate_run(labeled, outs[:1])
