import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doubles import JsonServer, separable_records
from oracles import finite_difference, max_relative_error
from rxdistill.dataset_builder import build_dataset
from rxdistill.distill import (
    DistillConfig, LabeledRecord, ReferenceStudent, ReplyCache, RemoteTeacher, StubTeacher, evidence_teacher,
    label_with_teacher, objective, parse_teacher_reply, rationale_loss, record_losses, selection_loss_ce,
    selection_loss_indicator, softmax, student_outputs, total_loss, train_reference_student, write_loss_curve,
)
from rxdistill.errors import DegenerateDataset, SnapshotError, TeacherUnavailable, UnparseableReply
from rxdistill.reranker import HashEmbedder


def test_parse_reply():
    lab = parse_teacher_reply("ANSWER: 2\nREASON: stronger trial evidence")
    assert (lab.selected, lab.rationale) == (2, "stronger trial evidence")
    assert parse_teacher_reply("answer: 1\nreason: x").selected == 1
    assert parse_teacher_reply("Sure.\n**ANSWER:** 1\nREASON: multi\nline").rationale == "multi\nline"
    for bad in ("I think candidate B", "ANSWER: 3\nREASON: x", "ANSWER: 1\nREASON:   ", ""):
        with pytest.raises(UnparseableReply):
            parse_teacher_reply(bad)


def test_selection_losses():
    assert selection_loss_ce([1.0, 0.0], 1) == 0.0
    assert selection_loss_ce([0.5, 0.5], 2) == pytest.approx(0.6931471805599453, abs=1e-15)
    assert selection_loss_ce([0.0, 1.0], 1) == pytest.approx(-math.log(1e-12))
    assert selection_loss_ce([0.0, 1.0], 1) == pytest.approx(27.631021115928547)
    assert selection_loss_indicator(1, 1) == 0 and selection_loss_indicator(2, 1) == 1


def test_rationale_and_total():
    assert rationale_loss([1, 2], [1, 2]) == 0.0
    assert rationale_loss([1, 0], [0, 1]) == 2.0
    assert total_loss(1.0, 0.25, 1.0) == 1.25
    assert total_loss(0.7, 3.0, 0.0) == 0.7
    assert total_loss(0.0, 3.0, 2.0) == 6.0


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, finite)
def test_total_linear_in_lambda(s, r, l1, l2):
    r, l1, l2 = abs(r), abs(l1), abs(l2)
    assert total_loss(s, r, l1 + l2) == pytest.approx(total_loss(s, r, l1) + l2 * r, abs=1e-9)


grid = st.integers(-40, 40).map(lambda i: i / 8)  # exact in binary, no underflow when squared


@settings(max_examples=200, deadline=None)
@given(st.lists(grid, min_size=3, max_size=3), st.lists(grid, min_size=3, max_size=3))
def test_rationale_symmetric_zero_iff_equal(a, b):
    assert rationale_loss(a, b) == rationale_loss(b, a)
    assert (rationale_loss(a, b) == 0.0) == (a == b)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.sampled_from([1, 2]))
def test_ce_nonnegative(p1, t):
    loss = selection_loss_ce([p1, 1 - p1], t)
    assert loss >= 0.0
    assert (loss == 0.0) == ([p1, 1 - p1][t - 1] == 1.0)


def test_stub_teacher_labels_everything():
    recs = [item.record for item in separable_records(6)]
    teacher = StubTeacher("ANSWER: 1\nREASON: r")
    labeled, quarantine = label_with_teacher(teacher, recs)
    assert [x.teacher.selected for x in labeled] == [1] * 6 and quarantine == []


def test_quarantine_unparseable():
    recs = [item.record for item in separable_records(10)]
    bad = recs[4].prompt
    teacher = StubTeacher(lambda p: "no idea" if p == bad else "ANSWER: 2\nREASON: ok")
    labeled, quarantine = label_with_teacher(teacher, recs)
    assert len(labeled) == 9 and len(quarantine) == 1
    assert quarantine[0] == {"id": recs[4].id, "raw": "no idea", "error": "UnparseableReply"}


def test_labeling_is_pure_and_cached(tmp_path):
    recs = [item.record for item in separable_records(5)]
    cache_path = tmp_path / "replies.json"
    t1 = evidence_teacher(recs)
    a, _ = label_with_teacher(t1, recs, ReplyCache(cache_path))
    t2 = evidence_teacher(recs)
    b, _ = label_with_teacher(t2, recs, ReplyCache(cache_path))
    assert a == b and t1.calls == 5 and t2.calls == 0
    assert all(x.teacher.selected == x.record.label for x in a)


def test_remote_teacher_wire_protocol():
    def handler(payload, headers):
        return 200, {"text": f"ANSWER: 2\nREASON: saw {len(payload['prompt'])} chars"}

    with JsonServer(handler) as srv:
        t = RemoteTeacher(srv.url, api_key="sekrit", model="big", max_tokens=64)
        lab = parse_teacher_reply(t.complete("hello"))
        assert lab.selected == 2 and lab.rationale == "saw 5 chars"
        payload, headers = srv.requests[0]
        assert payload == {"model": "big", "prompt": "hello", "max_tokens": 64}
        assert headers["Authorization"] == "Bearer sekrit"


def test_remote_teacher_unavailable():
    with JsonServer(lambda p, h: (500, {"error": "down"})) as srv:
        t = RemoteTeacher(srv.url, retries=1, base_delay=0.0)
        with pytest.raises(TeacherUnavailable):
            t.complete("x")
        assert len(srv.requests) == 2


def _prepared(n=3, seed=0):
    student = ReferenceStudent(256, seed=seed, embedder=HashEmbedder(16), init_scale=0.5)
    items = separable_records(n, seed)
    # disagreeing teacher on one record so both loss terms are non-trivial
    items[0] = LabeledRecord(items[0].record, type(items[0].teacher)(3 - items[0].teacher.selected, "other text"))
    return student, [student.prepare(x) for x in items]


@pytest.mark.parametrize("lam", [0.0, 1.0, 3.5])
def test_objective_gradient_matches_finite_differences(lam):
    student, batch = _prepared()
    theta = student.theta.copy()
    _, grad, _ = objective(theta, batch, lam)
    numeric = finite_difference(lambda: objective(theta, batch, lam)[0], theta)
    assert max_relative_error(grad, numeric) < 1e-4


def test_breakdown_decomposition():
    student, batch = _prepared()
    for rec in batch:
        b = record_losses(student.theta, rec, 0.7)
        assert abs(b.total - (b.select_ce + 0.7 * b.rationale_mse)) <= 1e-9
        p = softmax(rec.features @ student.theta)
        assert b.select_indicator == (1 - int(int(np.argmax(p)) + 1 == rec.target))


def test_zero_epochs_is_initialization():
    items = separable_records(4)
    cfg = DistillConfig(epochs=0, seed=9, n_features=128)
    res = train_reference_student(items, cfg)
    assert np.array_equal(res.student.theta, ReferenceStudent(128, seed=9).theta)
    assert res.curve == []


def test_separable_records_are_learned():
    res = train_reference_student(separable_records(50), DistillConfig())
    assert res.accuracy("teacher") >= 0.9
    assert res.curve[-1].total < res.curve[0].total


def test_degenerate_dataset():
    items = separable_records(4)
    with pytest.raises(DegenerateDataset):
        train_reference_student(items[:1])
    same = [LabeledRecord(x.record, type(x.teacher)(1, "r")) for x in items]
    with pytest.raises(DegenerateDataset):
        train_reference_student(same)


def test_student_io_and_outputs(tmp_path):
    items = separable_records(8)
    res = train_reference_student(items, DistillConfig(epochs=20, n_features=64))
    res.student.save(tmp_path / "s.bin")
    back = ReferenceStudent.load(tmp_path / "s.bin")
    assert np.array_equal(back.theta, res.student.theta)
    (tmp_path / "bad.bin").write_bytes(b"RXST\x01\x10\x00\x00\x00short")
    with pytest.raises(SnapshotError):
        ReferenceStudent.load(tmp_path / "bad.bin")
    outs = student_outputs(res.student, [x.record for x in items])
    assert all(o["selected"] in (1, 2) and o["rationale"] for o in outs)
    assert all(abs(sum(o["probs"]) - 1) < 1e-12 for o in outs)
    write_loss_curve(res.curve, tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 21


def test_rationale_is_extractive():
    item = separable_records(1)[0]
    rec = item.record
    s = ReferenceStudent(64)
    for slot in (1, 2):
        assert s.slot_rationale(rec, slot) in rec.background(slot)[0]["text"]
