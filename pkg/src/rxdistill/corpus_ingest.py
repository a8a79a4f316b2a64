"""Corpus ingestion: PMC article XML and clinical-trial JSON into a cleaned document store.

Cleaning keeps a document only if it has a non-empty title and abstract
and mentions at least one sampled drug name (case-insensitive, whole word).

Store layout::

    store/pmc.jsonl                 one Document per line
    store/clinical_trials.jsonl
    store/cleaning_report.json
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from collections.abc import Iterable, Iterator
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import EmptyDrugList, JsonMalformed, Rejected, XmlMalformed

log = logging.getLogger(__name__)

PMC = "pmc"
CLINICAL_TRIALS = "clinical_trials"
SOURCES = (PMC, CLINICAL_TRIALS)

EMPTY_TITLE = "EmptyTitle"
EMPTY_ABSTRACT = "EmptyAbstract"

DEFAULT_MAX_CHUNK_CHARS = 1200


@dataclass(frozen=True)
class Document:
    id: str
    source: str
    title: str
    body: str


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq: int
    text: str
    char_span: tuple[int, int]
    source: str = ""

    @property
    def source_id(self) -> str:
        return f"{self.source}:{self.doc_id}" if self.source else self.doc_id


@dataclass
class CleaningReport:
    input: int = 0
    empty_removed: int = 0
    no_mention_removed: int = 0
    retained: int = 0
    malformed: int = 0

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                                 for f in fields(self)})

    @property
    def consistent(self) -> bool:
        return self.input == self.empty_removed + self.no_mention_removed + self.retained


def _norm_ws(text: str) -> str:
    return " ".join(text.split())


def _paragraphs(elem) -> list[str]:
    """Text of the outermost <p> elements under `elem`, in document order."""
    out = []

    def walk(node):
        for child in node:
            if child.tag == "p":
                text = _norm_ws("".join(child.itertext()))
                if text:
                    out.append(text)
            else:
                walk(child)

    walk(elem)
    return out


def _check(doc: Document) -> Document:
    if not doc.title.strip():
        raise Rejected(EMPTY_TITLE, doc.id)
    if not doc.body.strip():
        raise Rejected(EMPTY_ABSTRACT, doc.id)
    return doc


def parse_pmc(data: bytes, doc_id: str = "") -> Document:
    """Parse one open-access article. Raises XmlMalformed or Rejected."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise XmlMalformed(str(exc)) from exc

    for aid in root.iter("article-id"):
        if aid.get("pub-id-type") in ("pmc", "pmcid", "pmcaid") and (aid.text or "").strip():
            doc_id = aid.text.strip()
            if not doc_id.upper().startswith("PMC"):
                doc_id = "PMC" + doc_id
            break
    title_el = root.find(".//title-group/article-title")
    if title_el is None:
        title_el = root.find(".//article-title")
    title = _norm_ws("".join(title_el.itertext())) if title_el is not None else ""

    abstract = []
    for abs_el in root.iter("abstract"):
        paras = _paragraphs(abs_el)
        if not paras:
            text = _norm_ws("".join(abs_el.itertext()))
            paras = [text] if text else []
        abstract.extend(paras)
    if not title:
        raise Rejected(EMPTY_TITLE, doc_id)
    if not abstract:
        raise Rejected(EMPTY_ABSTRACT, doc_id)

    body_el = root.find(".//body")
    body_paras = _paragraphs(body_el) if body_el is not None else []
    if not doc_id:
        raise XmlMalformed("article has no pmc id and none was supplied")
    return _check(Document(doc_id, PMC, title, "\n".join(abstract + body_paras)))


def parse_trial(data: bytes, doc_id: str = "") -> Document:
    """Parse one trial record (flat JSON with brief_title / brief_summary / detailed_description)."""
    try:
        rec = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise JsonMalformed(str(exc)) from exc
    if not isinstance(rec, dict):
        raise JsonMalformed("trial record must be a JSON object")
    doc_id = str(rec.get("nct_id") or rec.get("id") or doc_id).strip()
    if not doc_id:
        raise JsonMalformed("trial record has no id")
    title = _norm_ws(str(rec.get("brief_title") or ""))
    parts = [_norm_ws(str(rec.get(k) or "")) for k in ("brief_summary", "detailed_description")]
    parts = [p for p in parts if p]
    if not title:
        raise Rejected(EMPTY_TITLE, doc_id)
    if not parts:
        raise Rejected(EMPTY_ABSTRACT, doc_id)
    return _check(Document(doc_id, CLINICAL_TRIALS, title, "\n".join(parts)))


class DrugMatcher:
    """Case-insensitive whole-word matcher; anything non-alphanumeric is a boundary."""

    def __init__(self, drug_names: Iterable[str]):
        names = sorted({_norm_ws(n).lower() for n in drug_names if n and n.strip()},
                       key=lambda n: (-len(n), n))
        if not names:
            raise EmptyDrugList("drug name list is empty")
        self.names = names
        alt = "|".join(re.escape(n) for n in names)
        self._re = re.compile(rf"(?<![^\W_])(?:{alt})(?![^\W_])", re.IGNORECASE)

    def matches(self, text: str) -> bool:
        return self._re.search(text) is not None

    def mentions(self, doc: Document) -> bool:
        return self.matches(doc.title) or self.matches(doc.body)


def is_empty(doc: Document) -> bool:
    return not doc.title.strip() or not doc.body.strip()


def filter_by_drug_mention(docs: Iterable[Document], drug_names,
                           report: CleaningReport | None = None) -> Iterator[Document]:
    """Yield documents passing both cleaning rules, counting into `report` as it goes.

    `drug_names` may be an iterable of strings or a prebuilt DrugMatcher.
    """
    matcher = drug_names if isinstance(drug_names, DrugMatcher) else DrugMatcher(drug_names)
    report = report if report is not None else CleaningReport()
    for doc in docs:
        report.input += 1
        if is_empty(doc):
            report.empty_removed += 1
        elif not matcher.mentions(doc):
            report.no_mention_removed += 1
        else:
            report.retained += 1
            yield doc


def clean(docs: Iterable[Document], drug_names) -> tuple[list[Document], CleaningReport]:
    report = CleaningReport()
    kept = list(filter_by_drug_mention(docs, drug_names, report))
    return kept, report


# --- chunking -------------------------------------------------------------

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def _spans(text: str, pattern: re.Pattern, offset: int) -> list[tuple[int, int]]:
    """Split text[...] on `pattern`, returning stripped non-empty spans relative to the body."""
    out, pos = [], 0
    for m in list(pattern.finditer(text)) + [None]:
        end = m.start() if m else len(text)
        seg = text[pos:end]
        lead = len(seg) - len(seg.lstrip())
        s, e = pos + lead, pos + len(seg.rstrip())
        if e > s:
            out.append((offset + s, offset + e))
        if m:
            pos = m.end()
    return out


def _hard_split(body: str, start: int, end: int, limit: int) -> list[tuple[int, int]]:
    out = []
    while end - start > limit:
        cut = body.rfind(" ", start + 1, start + limit + 1)
        if cut <= start:
            cut = start + limit
        out.append((start, cut))
        start = cut
        while start < end and body[start].isspace():
            start += 1
    if end > start:
        out.append((start, end))
    return out


def chunk_document(doc: Document, max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS) -> list[Chunk]:
    """Greedy packing of paragraphs, falling back to sentences, then to whitespace cuts."""
    if max_chunk_chars < 1:
        raise ValueError("max_chunk_chars must be >= 1")
    body = doc.body
    pieces: list[tuple[int, int]] = []
    for ps, pe in _spans(body, re.compile(r"\n+"), 0):
        if pe - ps <= max_chunk_chars:
            pieces.append((ps, pe))
            continue
        for ss, se in _spans(body[ps:pe], _SENTENCE_END, ps):
            pieces.extend(_hard_split(body, ss, se, max_chunk_chars))

    spans: list[tuple[int, int]] = []
    for s, e in pieces:
        if spans and e - spans[-1][0] <= max_chunk_chars:
            spans[-1] = (spans[-1][0], e)
        else:
            spans.append((s, e))
    return [Chunk(doc.id, i, body[s:e], (s, e), doc.source) for i, (s, e) in enumerate(spans)]


# --- store ----------------------------------------------------------------

def read_drug_names(path: str | Path) -> list[str]:
    with Path(path).open(encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def _parse_dir(directory: Path | None, parser, suffixes, report: CleaningReport) -> Iterator[Document]:
    if directory is None:
        return
    for path in sorted(p for p in directory.iterdir() if p.suffix in suffixes):
        try:
            doc = parser(path.read_bytes(), doc_id=path.stem)
        except Rejected:
            report.input += 1
            report.empty_removed += 1
            continue
        except (XmlMalformed, JsonMalformed) as exc:
            report.malformed += 1
            log.warning("skipping %s: %s", path, exc)
            continue
        yield doc


def _unique(docs: Iterable[Document]) -> Iterator[Document]:
    seen = set()
    for doc in docs:
        if doc.id in seen:
            log.warning("duplicate %s id %s; keeping the first", doc.source, doc.id)
            continue
        seen.add(doc.id)
        yield doc


def ingest_corpus(pmc_dir, trials_dir, drug_names, out_dir) -> CleaningReport:
    """Parse, clean, and write the document store. Streams; never holds the corpus in memory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matcher = DrugMatcher(drug_names)
    total = CleaningReport()
    for source, directory, parser, suffixes in (
        (PMC, pmc_dir, parse_pmc, {".xml", ".nxml"}),
        (CLINICAL_TRIALS, trials_dir, parse_trial, {".json"}),
    ):
        report = CleaningReport()
        with (out / f"{source}.jsonl").open("w", encoding="utf-8") as fh:
            docs = _unique(_parse_dir(Path(directory) if directory else None, parser, suffixes, report))
            for doc in filter_by_drug_mention(docs, matcher, report):
                fh.write(json.dumps(asdict(doc), ensure_ascii=False, sort_keys=True) + "\n")
        total = total.merge(report)
    (out / "cleaning_report.json").write_text(json.dumps(asdict(total), indent=2, sort_keys=True) + "\n")
    return total


def iter_store(store_dir) -> Iterator[Document]:
    store = Path(store_dir)
    for source in SOURCES:
        path = store / f"{source}.jsonl"
        if not path.exists():
            continue
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield Document(**json.loads(line))
