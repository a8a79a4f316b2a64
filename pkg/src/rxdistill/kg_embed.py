"""Entity embeddings for the knowledge graph and the cosine primitive.

The trainer is a translational margin-ranking model: a triple (h, r, t)
scores ``-||e_h + w_r - e_t||`` and each positive is pushed at least
``margin`` above uniformly corrupted-tail negatives by plain SGD. Entity
vectors are projected back onto the unit sphere after every step and
relation vectors carry an L2 penalty; without the penalty translations grow
until linked entities point in unrelated directions, which defeats the
cosine similarity the sampler depends on. Only the entity table leaves this
module; relation vectors stay with the trainer.

Embedding file format (text, one entity per line)::

    rxemb <version> <entity_count> <dim>
    <entity id>\t<v0> <v1> ... <v{dim-1}>

Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyGraph, MissingFile, SnapshotError, UnknownEntity, ZeroVector
from .kg_store import KnowledgeGraph

EMB_VERSION = 1


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or u.size == 0:
        raise DimensionMismatch(f"cannot compare shapes {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    c = float(np.dot(u, v)) / (nu * nv)
    return max(-1.0, min(1.0, c))


@dataclass(frozen=True)
class EmbedTrainConfig:
    dim: int = 64
    epochs: int = 200
    learning_rate: float = 0.05
    margin: float = 1.0
    negatives_per_positive: int = 2
    relation_l2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.relation_l2 < 0:
            raise ValueError("relation_l2 must be >= 0")


class EmbeddingTable:
    """One vector per entity index, with cached norms. Treat as read-only."""

    def __init__(self, vectors, entities: list[str] | None = None):
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise DimensionMismatch(f"expected an (n, dim) matrix, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding table contains non-finite values")
        vectors.setflags(write=False)
        self.vectors = vectors
        self.entities = list(entities) if entities is not None else [str(i) for i in range(len(vectors))]
        if len(self.entities) != len(vectors):
            raise DimensionMismatch("entity list and vector count differ")
        self.norm_cache = np.linalg.norm(vectors, axis=1)
        self.norm_cache.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vectors)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.entities == other.entities and np.array_equal(self.vectors, other.vectors)

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.vectors * factor, self.entities)


def entity_similarity(t: EmbeddingTable, a: int, b: int) -> float:
    n = len(t)
    for x in (a, b):
        if not 0 <= x < n:
            raise UnknownEntity(x)
    na, nb = t.norm_cache[a], t.norm_cache[b]
    if na == 0.0 or nb == 0.0:
        raise ZeroVector(f"entity {a if na == 0.0 else b} has a zero embedding")
    c = float(np.dot(t.vectors[a], t.vectors[b])) / (float(na) * float(nb))
    return max(-1.0, min(1.0, c))


def similarity_to_all(t: EmbeddingTable, a: int) -> np.ndarray:
    """Cosine of entity `a` against every entity, vectorized."""
    if not 0 <= a < len(t):
        raise UnknownEntity(a)
    if t.norm_cache[a] == 0.0 or np.any(t.norm_cache == 0.0):
        raise ZeroVector("zero embedding in table")
    sims = (t.vectors @ t.vectors[a]) / (t.norm_cache * t.norm_cache[a])
    return np.clip(sims, -1.0, 1.0)


# --- training -------------------------------------------------------------

def _distance_and_grad(diff: np.ndarray) -> tuple[float, np.ndarray]:
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return 0.0, np.zeros_like(diff)
    return d, diff / d


def ranking_loss(ent: np.ndarray, rel: np.ndarray, batch, margin: float):
    """Summed hinge loss and gradients over ``batch`` of (h, r, t, t_neg) tuples.

    Returns ``(loss, grad_ent, grad_rel)`` with gradients the same shape as
    the parameter tables.
    """
    g_ent = np.zeros_like(ent)
    g_rel = np.zeros_like(rel)
    total = 0.0
    for h, r, t, tn in batch:
        d_pos, u_pos = _distance_and_grad(ent[h] + rel[r] - ent[t])
        d_neg, u_neg = _distance_and_grad(ent[h] + rel[r] - ent[tn])
        hinge = margin + d_pos - d_neg
        if hinge <= 0.0:
            continue
        total += hinge
        g_ent[h] += u_pos - u_neg
        g_rel[r] += u_pos - u_neg
        g_ent[t] -= u_pos
        g_ent[tn] += u_neg
    return total, g_ent, g_rel


def objective(ent: np.ndarray, rel: np.ndarray, batch, margin: float, relation_l2: float):
    """Ranking loss plus the relation penalty, as minimized by each SGD step."""
    loss, g_ent, g_rel = ranking_loss(ent, rel, batch, margin)
    rows = sorted({b[1] for b in batch})
    loss += relation_l2 * float(np.sum(rel[rows] ** 2))
    g_rel[rows] += 2.0 * relation_l2 * rel[rows]
    return loss, g_ent, g_rel


def init_tables(num_entities: int, num_relations: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    ent = rng.uniform(-bound, bound, size=(num_entities, dim))
    rel = rng.uniform(-bound, bound, size=(num_relations, dim))
    return ent, rel, rng


@dataclass
class TrainResult:
    table: EmbeddingTable
    relation_vectors: np.ndarray
    epoch_losses: list[float] = field(default_factory=list)


def _corrupt_tail(rng, h, r, t, num_entities, true_triples, max_tries=10):
    tn = t
    for _ in range(max_tries):
        tn = int(rng.integers(num_entities))
        if tn != t and (h, r, tn) not in true_triples:
            return tn
    return tn


def train(g: KnowledgeGraph, cfg: EmbedTrainConfig) -> TrainResult:
    """Train entity vectors; ``epoch_losses`` holds the mean hinge loss per (positive, negative)."""
    if g.num_edges == 0:
        raise EmptyGraph("cannot train embeddings on a graph with no edges")
    ent, rel, rng = init_tables(g.num_entities, g.num_relations, cfg.dim, cfg.seed)
    if cfg.epochs == 0:
        return TrainResult(EmbeddingTable(ent, g.entities), rel, [])
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    true_triples = set(g.edges)
    order = np.arange(g.num_edges)
    losses = []
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        count = 0
        for k in order:
            h, r, t = g.edges[k]
            batch = [(h, r, t, _corrupt_tail(rng, h, r, t, g.num_entities, true_triples))
                     for _ in range(cfg.negatives_per_positive)]
            hinge, _, _ = ranking_loss(ent, rel, batch, cfg.margin)
            _, g_ent, g_rel = objective(ent, rel, batch, cfg.margin, cfg.relation_l2)
            epoch_loss += hinge
            count += len(batch)
            ent -= cfg.learning_rate * g_ent
            rel -= cfg.learning_rate * g_rel
            for e in {h, t, *(b[3] for b in batch)}:
                ent[e] /= np.linalg.norm(ent[e])
        losses.append(epoch_loss / count)
    if not all(math.isfinite(x) for x in losses):
        raise FloatingPointError("training diverged")
    return TrainResult(EmbeddingTable(ent, g.entities), rel, losses)


def train_embeddings(g: KnowledgeGraph, cfg: EmbedTrainConfig) -> EmbeddingTable:
    return train(g, cfg).table


# --- persistence ----------------------------------------------------------

def save_embeddings(t: EmbeddingTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"rxemb {EMB_VERSION} {len(t)} {t.dim}\n")
        for ent, vec in zip(t.entities, t.vectors):
            fh.write(ent + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "rxemb":
            raise SnapshotError(f"{path}: not an embedding file")
        if int(header[1]) != EMB_VERSION:
            raise SnapshotError(f"{path}: unsupported version {header[1]}")
        n, dim = int(header[2]), int(header[3])
        entities, rows = [], []
        for line in fh:
            ent, _, vals = line.rstrip("\n").partition("\t")
            entities.append(ent)
            rows.append([float(x) for x in vals.split()])
    if len(rows) != n or any(len(r) != dim for r in rows):
        raise SnapshotError(f"{path}: header says {n}x{dim}, body disagrees")
    return EmbeddingTable(np.array(rows, dtype=float).reshape(n, dim), entities)
