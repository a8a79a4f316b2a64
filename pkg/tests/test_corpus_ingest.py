import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from rxdistill.corpus_ingest import (
    CLINICAL_TRIALS, EMPTY_ABSTRACT, EMPTY_TITLE, PMC, CleaningReport, Document, DrugMatcher,
    chunk_document, clean, filter_by_drug_mention, ingest_corpus, is_empty, iter_store, parse_pmc,
    parse_trial,
)
from rxdistill.errors import EmptyDrugList, JsonMalformed, Rejected, XmlMalformed

CLEANING = FIXTURES / "cleaning"


def xml(title="T", abstract="<p>A</p>", body=""):
    return (f'<article><front><article-meta><article-id pub-id-type="pmc">PMC1</article-id>'
            f"<title-group><article-title>{title}</article-title></title-group>"
            f"<abstract>{abstract}</abstract></article-meta></front>{body}</article>").encode()


def test_parse_minimal_pmc():
    doc = parse_pmc(xml())
    assert doc == Document("PMC1", PMC, "T", "A")


def test_parse_pmc_abstract_and_body_paragraphs():
    doc = parse_pmc(xml(abstract="<p>One.</p><p>Two.</p>",
                        body="<body><sec><p>Three <italic>x</italic>.</p></sec></body>"))
    assert doc.body == "One.\nTwo.\nThree x."


def test_parse_pmc_rejections():
    with pytest.raises(Rejected) as info:
        parse_pmc(xml(title=""))
    assert info.value.reason == EMPTY_TITLE
    with pytest.raises(Rejected) as info:
        parse_pmc(xml(abstract=""))
    assert info.value.reason == EMPTY_ABSTRACT
    with pytest.raises(XmlMalformed):
        parse_pmc(xml()[:40])


def test_parse_trial():
    doc = parse_trial(json.dumps({"nct_id": "NCT000", "brief_title": "Title",
                                  "brief_summary": "Summary."}).encode())
    assert doc == Document("NCT000", CLINICAL_TRIALS, "Title", "Summary.")
    with pytest.raises(Rejected) as info:
        parse_trial(json.dumps({"nct_id": "NCT1", "brief_title": "x"}).encode())
    assert info.value.reason == EMPTY_ABSTRACT
    with pytest.raises(JsonMalformed):
        parse_trial(b"\x00not json")
    with pytest.raises(JsonMalformed):
        parse_trial(b"[1, 2]")


@pytest.mark.parametrize("text,hit", [
    ("Patients took aspirin daily.", True),
    ("ASPIRIN at onset", True),
    ("several aspirins were compared", False),
    ("non-aspirin analgesics", True),
    ("aspirin_like", True),
    ("aspirin2", False),
    ("no drug here", False),
])
def test_word_boundary_matching(text, hit):
    assert DrugMatcher(["aspirin"]).matches(text) is hit


def test_multiword_names():
    m = DrugMatcher(["beta blocker"])
    assert m.matches("A Beta Blocker was used")
    assert not m.matches("beta-blockers")


def test_empty_drug_list():
    with pytest.raises(EmptyDrugList):
        DrugMatcher(["  ", ""])


def test_cleaning_fixture_counts(tmp_path):
    drugs = (CLEANING / "drugs.txt").read_text().split()
    report = ingest_corpus(CLEANING / "pmc", CLEANING / "trials", drugs, tmp_path)
    assert (report.input, report.empty_removed, report.no_mention_removed, report.retained) == (10, 3, 2, 5)
    assert report.consistent
    kept = sorted(d.id for d in iter_store(tmp_path))
    assert kept == ["NCT0001", "NCT0002", "PMC0001", "PMC0002", "PMC0003"]
    assert json.loads((tmp_path / "cleaning_report.json").read_text())["retained"] == 5


def test_malformed_files_counted_separately(tmp_path):
    pmc = tmp_path / "pmc"
    pmc.mkdir()
    (pmc / "bad.xml").write_text("<article><unclosed>")
    (pmc / "good.xml").write_text(xml(abstract="<p>aspirin works</p>").decode())
    report = ingest_corpus(pmc, None, ["aspirin"], tmp_path / "out")
    assert report.malformed == 1 and report.retained == 1 and report.consistent


docs_st = st.lists(st.builds(
    Document,
    id=st.text("abc123", min_size=1, max_size=4),
    source=st.just(PMC),
    title=st.sampled_from(["", " ", "Aspirin study", "Trial", "metformin"]),
    body=st.sampled_from(["", "aspirin helps", "nothing relevant", "Metformin lowers glucose"]),
), max_size=20)


@settings(max_examples=100, deadline=None)
@given(docs_st)
def test_cleaning_order_independent_and_consistent(docs):
    drugs = ["aspirin", "metformin"]
    kept, report = clean(docs, drugs)
    assert report.consistent
    matcher = DrugMatcher(drugs)
    mention_first = [d for d in docs if matcher.mentions(d)]
    other_order = [d for d in mention_first if not is_empty(d)]
    assert {id(d) for d in kept} == {id(d) for d in other_order}


def test_filter_streams():
    report = CleaningReport()
    gen = filter_by_drug_mention(iter([Document("1", PMC, "t", "aspirin")]), ["aspirin"], report)
    assert report.input == 0
    assert next(gen).id == "1" and report.retained == 1


def test_short_body_single_chunk():
    doc = Document("d", PMC, "t", "short body.")
    chunks = chunk_document(doc, 1200)
    assert len(chunks) == 1 and chunks[0].char_span == (0, len(doc.body)) and chunks[0].text == doc.body


def test_two_long_paragraphs_split_at_boundary():
    p1, p2 = "a" * 799 + ".", "b" * 799 + "."
    doc = Document("d", PMC, "t", p1 + "\n" + p2)
    chunks = chunk_document(doc, 1200)
    assert [c.text for c in chunks] == [p1, p2]
    assert chunks[1].char_span == (801, 1601)
    assert chunks[0].source_id == "pmc:d"


words = st.text("abcdefgh", min_size=1, max_size=30)
sentence = st.lists(words, min_size=1, max_size=12).map(lambda ws: " ".join(ws) + ".")
paragraph = st.lists(sentence, min_size=1, max_size=6).map(" ".join)
bodies = st.lists(paragraph, min_size=1, max_size=6).map("\n".join)


@settings(max_examples=150, deadline=None)
@given(bodies, st.integers(5, 300))
def test_chunking_reconstructs_body(body, limit):
    doc = Document("d", PMC, "t", body)
    chunks = chunk_document(doc, limit)
    assert chunks == chunk_document(doc, limit)
    pos = 0
    for i, c in enumerate(chunks):
        s, e = c.char_span
        assert c.seq == i and body[s:e] == c.text and len(c.text) <= limit
        assert s >= pos and body[pos:s].strip() == ""
        pos = e
    assert body[pos:].strip() == ""
