"""Semantic re-ranking of lexically retrieved chunks for a (disease, drug) pair.

Each candidate chunk is scored by the cosine between the embedding of the
pair text and the embedding of the chunk; chunks below ``threshold`` are
dropped and at most ``max_chunks`` of the best survive.

Three embedders ship with the package:

``hash``    deterministic token-hash embedder (each token maps to a seeded
            pseudo-random unit vector; a text is the mean of its tokens)
``bow``     hashed bag-of-words term-frequency vector
``remote``  JSON endpoint: POST {"texts": [...], "model": id} -> {"vectors": [[...], ...]},
            configured by EMBED_ENDPOINT / EMBED_API_KEY
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import _http
from .errors import CacheCorrupt, EmbedderFailure, EmptyName, ValidationError
from .kg_embed import cosine
from .search_index import InvertedIndex, query_terms, retrieve_topk, tokenize

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.7
DEFAULT_MAX_CHUNKS = 8
CACHE_VERSION = 1


@runtime_checkable
class TextEmbedder(Protocol):
    identity: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _tokens_or_text(text: str) -> list[str]:
    toks = tokenize(text)
    return toks if toks else [text.strip() or "<empty>"]


def _digest(text: str, salt: str = "") -> bytes:
    return hashlib.blake2b((salt + "\x00" + text).encode("utf-8"), digest_size=16).digest()


class HashEmbedder:
    """Mean of per-token pseudo-random unit vectors. Fully offline and deterministic."""

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.identity = f"hash-{dim}-{seed}"
        self._token_vec = lru_cache(maxsize=65536)(self._make_token_vec)

    def _make_token_vec(self, token: str) -> np.ndarray:
        rng = np.random.default_rng(int.from_bytes(_digest(token, str(self.seed))[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed(self, text: str) -> np.ndarray:
        vecs = [self._token_vec(t) for t in _tokens_or_text(text)]
        return np.mean(vecs, axis=0)


class BowEmbedder:
    """Hashed term-frequency vector; cosine between two of these is bag-of-words cosine."""

    def __init__(self, dim: int = 4096):
        self.dim = dim
        self.identity = f"bow-{dim}"

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in _tokens_or_text(text):
            v[int.from_bytes(_digest(tok)[:8], "little") % self.dim] += 1.0
        return v


class RemoteEmbedder:
    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str = "text-embedding-3-small", dim: int = 0, timeout: float = 30.0):
        self.endpoint = endpoint or os.environ.get("EMBED_ENDPOINT", "")
        self.api_key = api_key if api_key is not None else os.environ.get("EMBED_API_KEY")
        if not self.endpoint:
            raise ValidationError("remote embedder needs EMBED_ENDPOINT")
        self.model = model
        self.dim = dim
        self.timeout = timeout
        self.identity = f"remote-{model}"

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        reply = _http.post_json(self.endpoint, {"texts": list(texts), "model": self.model},
                                self.api_key, self.timeout)
        vectors = [np.asarray(v, dtype=float) for v in reply["vectors"]]
        if len(vectors) != len(texts):
            raise ValueError(f"asked for {len(texts)} vectors, got {len(vectors)}")
        for v in vectors:
            if self.dim and v.shape != (self.dim,):
                raise ValueError(f"vector of shape {v.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(v)):
                raise ValueError("non-finite vector component")
        if not self.dim and vectors:
            self.dim = len(vectors[0])
        return vectors

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def make_embedder(kind: str, dim: int | None = None, seed: int = 0) -> TextEmbedder:
    if kind == "hash":
        return HashEmbedder(dim or 256, seed)
    if kind == "bow":
        return BowEmbedder(dim or 4096)
    if kind == "remote":
        return RemoteEmbedder(dim=dim or 0)
    raise ValidationError(f"unknown embedder {kind!r} (expected hash, bow or remote)")


# --- cache ----------------------------------------------------------------

def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Content-hash keyed vectors for one embedder, persisted as versioned JSON."""

    def __init__(self, path: str | Path | None, embedder_id: str):
        self.path = Path(path) if path else None
        self.embedder_id = embedder_id
        self.vectors: dict[str, list[float]] = {}
        self.dirty = False
        if self.path and self.path.exists():
            try:
                self._load()
            except CacheCorrupt as exc:
                warnings.warn(f"embedding cache {self.path} unusable ({exc}); recomputing",
                              RuntimeWarning, stacklevel=2)
                self.vectors = {}

    def _load(self):
        try:
            payload = json.loads(self.path.read_text(encoding="utf-8"))
            if payload["version"] != CACHE_VERSION:
                raise CacheCorrupt(f"version {payload['version']}")
            vectors = payload["vectors"]
            if not isinstance(vectors, dict):
                raise CacheCorrupt("vectors is not a mapping")
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise CacheCorrupt(str(exc)) from exc
        if payload.get("embedder") != self.embedder_id:
            log.info("cache %s belongs to %s, not %s; starting empty",
                     self.path, payload.get("embedder"), self.embedder_id)
            return
        self.vectors = vectors

    def get(self, text: str) -> np.ndarray | None:
        v = self.vectors.get(text_key(text))
        return None if v is None else np.asarray(v, dtype=float)

    def put(self, text: str, vec: np.ndarray) -> None:
        self.vectors[text_key(text)] = [float(x) for x in vec]
        self.dirty = True

    def save(self) -> None:
        if not self.path or not self.dirty:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        payload = {"version": CACHE_VERSION, "embedder": self.embedder_id,
                   "vectors": dict(sorted(self.vectors.items()))}
        tmp.write_text(json.dumps(payload, separators=(",", ":")), encoding="utf-8")
        tmp.replace(self.path)
        self.dirty = False


class CachedEmbedder:
    """Wraps a TextEmbedder; repeated texts are served from the cache."""

    def __init__(self, embedder: TextEmbedder, cache: EmbeddingCache | None = None):
        self.inner = embedder
        self.cache = cache if cache is not None else EmbeddingCache(None, embedder.identity)
        self.identity = embedder.identity
        self.dim = embedder.dim

    def embed(self, text: str) -> np.ndarray:
        v = self.cache.get(text)
        if v is None:
            v = np.asarray(self.inner.embed(text), dtype=float)
            self.cache.put(text, v)
        return v


def cache_embeddings(embedder: TextEmbedder, texts: Iterable[str],
                     cache: EmbeddingCache) -> dict[str, np.ndarray]:
    """Embed `texts`, filling and persisting `cache`. Returns text -> vector."""
    if cache.embedder_id != embedder.identity:
        raise ValidationError(f"cache belongs to {cache.embedder_id}, not {embedder.identity}")
    out = {}
    missing = []
    for text in dict.fromkeys(texts):
        v = cache.get(text)
        if v is None:
            missing.append(text)
        else:
            out[text] = v
    if missing:
        if hasattr(embedder, "embed_many"):
            vectors = embedder.embed_many(missing)
        else:
            vectors = [embedder.embed(t) for t in missing]
        for text, v in zip(missing, vectors):
            v = np.asarray(v, dtype=float)
            cache.put(text, v)
            out[text] = v
        cache.save()
    return out


# --- re-ranking -----------------------------------------------------------

def pair_text(disease: str, drug: str) -> str:
    disease, drug = " ".join(disease.split()), " ".join(drug.split())
    if not disease or not drug:
        raise EmptyName("disease and drug names must be non-empty")
    return f"{disease} [SEP] {drug}"


@dataclass(frozen=True)
class Candidate:
    ref: int
    text: str
    bm25_score: float
    source_id: str = ""


@dataclass(frozen=True)
class ScoredChunk:
    ref: int
    text: str
    source_id: str
    bm25_score: float
    cosine_score: float


@dataclass
class BackgroundSet:
    pair: tuple[str, str]
    chunks: list[ScoredChunk] = field(default_factory=list)
    threshold_used: float = DEFAULT_THRESHOLD

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.chunks]


def _embed_with_retry(embedder, text, ref, retries, base_delay):
    try:
        return _http.with_retries(lambda: embedder.embed(text), retries=retries, base_delay=base_delay)
    except Exception as exc:
        raise EmbedderFailure(ref, exc) from exc


def rerank(embedder: TextEmbedder, text: str, candidates: Sequence[Candidate],
           threshold: float = DEFAULT_THRESHOLD, max_chunks: int = DEFAULT_MAX_CHUNKS,
           retries: int = 2, base_delay: float = 0.5, max_in_flight: int = 1,
           pair: tuple[str, str] | None = None) -> BackgroundSet:
    """Keep candidates whose cosine to the pair text is at least `threshold`.

    Output is ordered by descending cosine, ties by ascending chunk ref, so
    the result does not depend on the order of `candidates`.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    if max_chunks < 1:
        raise ValueError("max_chunks must be >= 1")
    if pair is None:
        left, _, right = text.partition(" [SEP] ")
        pair = (left, right)
    bg = BackgroundSet(pair=pair, threshold_used=threshold)
    if not candidates:
        return bg
    query_vec = _embed_with_retry(embedder, text, "pair", retries, base_delay)

    def score(c: Candidate) -> float:
        return cosine(query_vec, _embed_with_retry(embedder, c.text, c.ref, retries, base_delay))

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            cosines = list(pool.map(score, candidates))
    else:
        cosines = [score(c) for c in candidates]
    kept = [ScoredChunk(c.ref, c.text, c.source_id, c.bm25_score, cs)
            for c, cs in zip(candidates, cosines) if cs >= threshold]
    kept.sort(key=lambda s: (-s.cosine_score, s.ref))
    bg.chunks = kept[:max_chunks]
    return bg


# --- pipeline helpers -----------------------------------------------------

def retrieve_candidates(idx: InvertedIndex, chunk_table: dict, disease_name: str, drug_name: str,
                        k: int) -> list[Candidate]:
    """Lexical step for one pair: query = disease tokens followed by drug tokens."""
    results = retrieve_topk(idx, query_terms(disease_name, drug_name), k)
    return [Candidate(r.chunk_ref, chunk_table[r.chunk_ref].text, r.bm25_score,
                      chunk_table[r.chunk_ref].source_id) for r in results]


def background_to_json(disease_id: str, drug_id: str, bg: BackgroundSet) -> dict:
    return {
        "disease": disease_id,
        "drug": drug_id,
        "disease_name": bg.pair[0],
        "drug_name": bg.pair[1],
        "threshold": bg.threshold_used,
        "chunks": [asdict(c) for c in bg.chunks],
    }


def background_from_json(d: dict) -> tuple[tuple[str, str], BackgroundSet]:
    bg = BackgroundSet((d["disease_name"], d["drug_name"]),
                       [ScoredChunk(**c) for c in d["chunks"]], d["threshold"])
    return (d["disease"], d["drug"]), bg
