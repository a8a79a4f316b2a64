"""In-memory inverted index with BM25 ranking over chunks.

Chunk refs are non-negative integers. Scoring per query term t::

    idf(t)  = max(0, ln((N - df + 0.5) / (df + 0.5)))
    term(t) = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen))

Query terms are de-duplicated before scoring.

Snapshot (``index.bin``): magic b"RXIX", version byte, UTF-8 JSON payload.
``chunks.jsonl`` next to it maps refs back to chunk text and provenance.
"""

from __future__ import annotations

import bisect
import heapq
import json
import math
import re
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from .corpus_ingest import DEFAULT_MAX_CHUNK_CHARS, Chunk, chunk_document, iter_store
from .errors import DuplicateChunkRef, MissingFile, SnapshotError, UnknownChunk

SNAPSHOT_MAGIC = b"RXIX"
SNAPSHOT_VERSION = 1
DEFAULT_K = 80

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on anything non-alphanumeric, drop tokens shorter than 2."""
    return [tok for tok in _SPLIT.split(text.lower()) if len(tok) >= 2]


def query_terms(*texts: str) -> list[str]:
    """Tokens of all texts, first occurrence order, duplicates removed."""
    return list(dict.fromkeys(tok for text in texts for tok in tokenize(text)))


@dataclass(frozen=True)
class QueryResult:
    chunk_ref: int
    bm25_score: float
    matched_terms: frozenset[str]


class InvertedIndex:
    def __init__(self, postings: dict[str, list[tuple[int, int]]], doc_lengths: dict[int, int],
                 k1: float = 1.2, b: float = 0.75):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.k1 = k1
        self.b = b
        self.N = len(doc_lengths)
        self.avg_doc_len = (math.fsum(doc_lengths.values()) / self.N) if self.N else 0.0
        self._refs = {term: [r for r, _ in plist] for term, plist in postings.items()}

    def __eq__(self, other):
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        return (self.postings == other.postings and self.doc_lengths == other.doc_lengths
                and self.k1 == other.k1 and self.b == other.b)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return max(0.0, math.log((self.N - df + 0.5) / (df + 0.5)))

    def tf(self, term: str, ref: int) -> int:
        refs = self._refs.get(term)
        if not refs:
            return 0
        i = bisect.bisect_left(refs, ref)
        if i < len(refs) and refs[i] == ref:
            return self.postings[term][i][1]
        return 0

    def _term_score(self, idf: float, tf: int, length: int) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * length / self.avg_doc_len)
        return idf * tf * (self.k1 + 1.0) / (tf + norm)


def build_index(chunks: Iterable[tuple[int, str]], k1: float = 1.2, b: float = 0.75) -> InvertedIndex:
    """Index (ref, text) pairs. Refs must be unique."""
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: dict[int, int] = {}
    for ref, text in chunks:
        if ref in doc_lengths:
            raise DuplicateChunkRef(f"chunk ref {ref} appears twice")
        toks = tokenize(text)
        doc_lengths[ref] = len(toks)
        for term, tf in Counter(toks).items():
            postings.setdefault(term, []).append((ref, tf))
    for plist in postings.values():
        plist.sort()
    postings = dict(sorted(postings.items()))
    return InvertedIndex(postings, dict(sorted(doc_lengths.items())), k1, b)


def bm25_score(idx: InvertedIndex, terms: Iterable[str], ref: int) -> float:
    if ref not in idx.doc_lengths:
        raise UnknownChunk(f"no chunk with ref {ref}")
    length = idx.doc_lengths[ref]
    score = 0.0
    for term in dict.fromkeys(terms):
        tf = idx.tf(term, ref)
        if tf:
            score += idx._term_score(idx.idf(term), tf, length)
    return score


def retrieve_topk(idx: InvertedIndex, terms: Iterable[str], k: int = DEFAULT_K) -> list[QueryResult]:
    """Term-at-a-time accumulation, then a partial sort by (-score, ref)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    acc: dict[int, float] = {}
    matched: dict[int, set[str]] = {}
    for term in dict.fromkeys(terms):
        plist = idx.postings.get(term)
        if not plist:
            continue
        idf = idx.idf(term)
        for ref, tf in plist:
            acc[ref] = acc.get(ref, 0.0) + idx._term_score(idf, tf, idx.doc_lengths[ref])
            matched.setdefault(ref, set()).add(term)
    best = heapq.nsmallest(k, acc.items(), key=lambda kv: (-kv[1], kv[0]))
    return [QueryResult(ref, score, frozenset(matched[ref])) for ref, score in best]


# --- snapshot -------------------------------------------------------------

def save_index(idx: InvertedIndex, path: str | Path) -> None:
    payload = {
        "k1": idx.k1,
        "b": idx.b,
        "doc_lengths": [[r, n] for r, n in idx.doc_lengths.items()],
        "postings": {t: [list(p) for p in plist] for t, plist in idx.postings.items()},
    }
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(SNAPSHOT_MAGIC + bytes([SNAPSHOT_VERSION]) + body)


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not an index snapshot")
    if raw[4] != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported index version {raw[4]}")
    payload = json.loads(raw[5:].decode("utf-8"))
    postings = {t: [tuple(p) for p in plist] for t, plist in payload["postings"].items()}
    return InvertedIndex(postings, {r: n for r, n in payload["doc_lengths"]},
                         payload["k1"], payload["b"])


# --- index directory: snapshot + chunk table ------------------------------

def index_store(store_dir, out_dir, max_chunk_chars: int | None = None,
                k1: float = 1.2, b: float = 0.75) -> InvertedIndex:
    """Chunk every stored document, assign sequential refs, and write ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    limit = max_chunk_chars or DEFAULT_MAX_CHUNK_CHARS
    pairs = []
    with (out / "chunks.jsonl").open("w", encoding="utf-8") as fh:
        ref = 0
        for doc in iter_store(store_dir):
            for ch in chunk_document(doc, limit):
                fh.write(json.dumps({"ref": ref, "doc_id": ch.doc_id, "source": ch.source,
                                     "seq": ch.seq, "span": list(ch.char_span), "text": ch.text},
                                    ensure_ascii=False, sort_keys=True) + "\n")
                pairs.append((ref, ch.text))
                ref += 1
    idx = build_index(pairs, k1, b)
    save_index(idx, out / "index.bin")
    return idx


def load_chunk_table(index_dir) -> dict[int, Chunk]:
    path = Path(index_dir) / "chunks.jsonl"
    if not path.is_file():
        raise MissingFile(str(path))
    table = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                table[d["ref"]] = Chunk(d["doc_id"], d["seq"], d["text"], tuple(d["span"]), d["source"])
    return table


def load_index_dir(index_dir) -> tuple[InvertedIndex, dict]:
    return load_index(Path(index_dir) / "index.bin"), load_chunk_table(index_dir)
