"""Disease -> (relevant drug, hard-negative drug) sampling.

For a disease d the candidate pool is every compound with a direct edge to
d plus the ``pool_top_m`` compounds nearest to d in embedding space. The
relevant drug maximizes

    relevance(d, c) = edge_weight * #treatment_edges(d, c) + emb_weight * cos(h_d, h_c)

and the hard negative is the remaining pool member most similar to the
relevant drug. All ties go to the lower entity index.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientCandidates, NotADisease, PipelineError, UnknownEntity
from .kg_embed import EmbeddingTable, entity_similarity, similarity_to_all
from .kg_store import COMPOUND, DISEASE, KnowledgeGraph, edge_count

log = logging.getLogger(__name__)

# DRKG's compound-disease treatment relations, plus a plain "treats" for hand-written graphs
DEFAULT_TREATMENT_RELATIONS = (
    "treats",
    "DRUGBANK::treats::Compound:Disease",
    "GNBR::T::Compound:Disease",
    "Hetionet::CtD::Compound:Disease",
)

NEGATIVE = "negative"
LESS_POSITIVE = "less_positive"


class EmptyPool(InsufficientCandidates):
    def __init__(self):
        super().__init__(0)


@dataclass(frozen=True)
class SamplerConfig:
    treatment_relations: tuple[str, ...] = DEFAULT_TREATMENT_RELATIONS
    pool_top_m: int = 50
    edge_weight: float = 1.0
    emb_weight: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "treatment_relations", tuple(self.treatment_relations))
        if self.pool_top_m < 0:
            raise ValueError("pool_top_m must be >= 0")
        if self.edge_weight < 0 or self.emb_weight < 0:
            raise ValueError("weights must be non-negative")
        if self.edge_weight == 0 and self.emb_weight == 0:
            raise ValueError("edge_weight and emb_weight cannot both be zero")


@dataclass(frozen=True)
class DiseaseDrugSet:
    disease: int
    relevant: int
    irrelevant: int
    rel_score: float
    sim_score: float
    candidate_pool_size: int
    effect_label: str

    def __post_init__(self):
        if self.relevant == self.irrelevant:
            raise ValueError("relevant and irrelevant candidates must differ")
        if not -1.0 <= self.sim_score <= 1.0:
            raise ValueError(f"sim_score {self.sim_score} outside [-1, 1]")


@dataclass
class SkipReport:
    disease: int
    reason: str


def _check_disease(g: KnowledgeGraph, d) -> int:
    d = g.index(d)
    if g.kinds[d] != DISEASE:
        raise NotADisease(f"{g.entities[d]} is not a disease")
    return d


def candidate_pool(g: KnowledgeGraph, t: EmbeddingTable, d, cfg: SamplerConfig) -> list[int]:
    d = _check_disease(g, d)
    linked = sorted({n for n, _, _ in g.incident(d) if g.kinds[n] == COMPOUND})
    pool = list(linked)
    if cfg.pool_top_m > 0:
        compounds = np.array(g.of_kind(COMPOUND), dtype=int)
        if compounds.size:
            sims = similarity_to_all(t, d)[compounds]
            # descending similarity, ties by ascending index
            order = np.lexsort((compounds, -sims))
            seen = set(linked)
            for c in compounds[order[:cfg.pool_top_m]]:
                c = int(c)
                if c not in seen:
                    seen.add(c)
                    pool.append(c)
    return pool


def relevance(g: KnowledgeGraph, t: EmbeddingTable, d, c, cfg: SamplerConfig) -> float:
    d, c = g.index(d), g.index(c)
    score = 0.0
    if cfg.edge_weight:
        score += cfg.edge_weight * edge_count(g, d, c, cfg.treatment_relations)
    if cfg.emb_weight:
        score += cfg.emb_weight * entity_similarity(t, d, c)
    return score


def _argmax(items: Iterable[int], key) -> int:
    best, best_score = None, None
    for c in sorted(items):
        s = key(c)
        if best is None or s > best_score:
            best, best_score = c, s
    return best


def sample_set(g: KnowledgeGraph, t: EmbeddingTable, d, cfg: SamplerConfig) -> DiseaseDrugSet:
    d = _check_disease(g, d)
    pool = candidate_pool(g, t, d, cfg)
    if not pool:
        raise EmptyPool()
    if len(pool) < 2:
        raise InsufficientCandidates(len(pool))
    rel_scores = {c: relevance(g, t, d, c, cfg) for c in pool}
    c_rel = _argmax(pool, rel_scores.__getitem__)
    rest = [c for c in pool if c != c_rel]
    c_irr = _argmax(rest, lambda c: entity_similarity(t, c, c_rel))
    treat_edges = edge_count(g, d, c_irr, cfg.treatment_relations)
    return DiseaseDrugSet(
        disease=d,
        relevant=c_rel,
        irrelevant=c_irr,
        rel_score=rel_scores[c_rel],
        sim_score=entity_similarity(t, c_irr, c_rel),
        candidate_pool_size=len(pool),
        effect_label=NEGATIVE if treat_edges == 0 else LESS_POSITIVE,
    )


def sample_corpus_sets(g: KnowledgeGraph, t: EmbeddingTable, diseases,
                       cfg: SamplerConfig) -> tuple[list[DiseaseDrugSet], list[SkipReport]]:
    """One set per disease, in input order. Failures are collected, never raised."""
    sets, skips = [], []
    for d in diseases:
        try:
            sets.append(sample_set(g, t, d, cfg))
        except (PipelineError, UnknownEntity) as exc:
            idx = g.entity_index.get(d, d) if isinstance(d, str) else d
            skips.append(SkipReport(idx, f"{type(exc).__name__}: {exc}"))
    if skips:
        log.info("skipped %d of %d diseases", len(skips), len(skips) + len(sets))
    return sets, skips


def set_to_json(g: KnowledgeGraph, s: DiseaseDrugSet) -> dict:
    return {
        "disease": g.entities[s.disease],
        "relevant": g.entities[s.relevant],
        "irrelevant": g.entities[s.irrelevant],
        "rel_score": s.rel_score,
        "sim_score": s.sim_score,
        "effect_label": s.effect_label,
        "pool_size": s.candidate_pool_size,
        "disease_name": g.name(s.disease),
        "relevant_name": g.name(s.relevant),
        "irrelevant_name": g.name(s.irrelevant),
    }


def write_sets(g: KnowledgeGraph, sets: list[DiseaseDrugSet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in sets:
            fh.write(json.dumps(set_to_json(g, s), sort_keys=True) + "\n")


def read_sets(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
