"""Selection F1 and ROUGE-1/2/L, implemented from scratch.

Conventions (also written into every report header):
  * selection F1 is binary with a chosen positive slot; macro F1 averages
    the two slots
  * ROUGE uses the same tokenizer as the search index, clipped n-gram
    counts, no stemming or stopword removal
  * corpus ROUGE is the arithmetic mean of per-record scores
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass

from .errors import EmptyInput, IdMismatch, LengthMismatch
from .search_index import tokenize

CONVENTIONS = {
    "selection_f1": "binary F1 with positive class = candidate slot 1; macro_f1 averages slots 1 and 2",
    "rouge": "clipped n-gram overlap on lowercase alphanumeric tokens (len>=2), no stemming",
    "rouge_headline": "f1",
    "aggregation": "arithmetic mean of per-record scores",
}


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    positive_class_definition: str
    macro_f1: float = 0.0


def _binary(predictions, references, positive):
    tp = fp = fn = tn = 0
    for p, r in zip(predictions, references):
        if p == positive:
            if r == positive:
                tp += 1
            else:
                fp += 1
        elif r == positive:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return tp, fp, fn, tn, precision, recall, _f1(precision, recall)


def f1_selection(predictions: Sequence[int], references: Sequence[int], positive: int = 1) -> F1Report:
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} references")
    if not predictions:
        raise EmptyInput("no predictions")
    tp, fp, fn, tn, p, r, f = _binary(predictions, references, positive)
    other = 2 if positive == 1 else 1
    macro = (f + _binary(predictions, references, other)[6]) / 2
    return F1Report(p, r, f, tp, fp, fn, tn, f"candidate slot {positive} is positive", macro)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> PRF:
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    c_total, r_total = sum(cand.values()), sum(ref.values())
    if not c_total or not r_total:
        return PRF(0.0, 0.0, 0.0)
    overlap = sum((cand & ref).values())
    p, r = overlap / c_total, overlap / r_total
    return PRF(p, r, _f1(p, r))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PRF:
    if not candidate or not reference:
        return PRF(0.0, 0.0, 0.0)
    lcs = lcs_length(candidate, reference)
    p, r = lcs / len(candidate), lcs / len(reference)
    return PRF(p, r, _f1(p, r))


@dataclass(frozen=True)
class RougeReport:
    rouge_1: PRF
    rouge_2: PRF
    rouge_l: PRF


def rouge_text(candidate: str, reference: str) -> RougeReport:
    c, r = tokenize(candidate), tokenize(reference)
    return RougeReport(rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r))


def mean_rouge(reports: Sequence[RougeReport]) -> RougeReport:
    if not reports:
        return RougeReport(PRF(0, 0, 0), PRF(0, 0, 0), PRF(0, 0, 0))

    def avg(attr):
        items = [getattr(rep, attr) for rep in reports]
        n = len(items)
        return PRF(sum(x.precision for x in items) / n, sum(x.recall for x in items) / n,
                   sum(x.f1 for x in items) / n)

    return RougeReport(avg("rouge_1"), avg("rouge_2"), avg("rouge_l"))


def evaluate_run(labeled: Sequence[Mapping], outputs: Sequence[Mapping]) -> dict:
    """Score student outputs against teacher and sampler references.

    `labeled` rows need ``id``, ``label`` (sampler slot) and
    ``teacher.selected`` / ``teacher.rationale``; `outputs` rows need
    ``id``, ``selected`` and ``rationale``.
    """
    by_id = {o["id"]: o for o in outputs}
    ids = [r["id"] for r in labeled]
    if set(ids) != set(by_id) or len(ids) != len(by_id):
        missing = sorted(set(ids) ^ set(by_id))[:5]
        raise IdMismatch(f"labeled and output ids differ, e.g. {missing}")
    if not ids:
        raise EmptyInput("nothing to evaluate")
    preds = [by_id[i]["selected"] for i in ids]
    teacher = [r["teacher"]["selected"] for r in labeled]
    sampler = [r["label"] for r in labeled]
    rouge = mean_rouge([rouge_text(by_id[r["id"]].get("rationale") or "", r["teacher"]["rationale"])
                        for r in labeled])
    n = len(ids)
    return {
        "conventions": CONVENTIONS,
        "records": n,
        "selection_vs_teacher": asdict(f1_selection(preds, teacher, 1)),
        "selection_vs_sampler": asdict(f1_selection(preds, sampler, 1)),
        "agreement_vs_teacher": sum(p == t for p, t in zip(preds, teacher)) / n,
        "agreement_vs_sampler": sum(p == s for p, s in zip(preds, sampler)) / n,
        "teacher_vs_sampler_agreement": sum(t == s for t, s in zip(teacher, sampler)) / n,
        "rouge": asdict(rouge),
    }
