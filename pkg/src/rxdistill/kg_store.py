"""Drug-repurposing knowledge graph: TSV ingestion, vocabularies, adjacency queries.

Triple files follow the DRKG distribution: three tab-separated columns
(head, relation, tail), one triple per line, ``#`` starts a comment line.
Entity kind comes from the namespace prefix before ``::``.

Snapshot format (``.kgsnap``)::

    bytes 0-3   magic  b"RXKG"
    byte  4     format version (currently 1)
    bytes 5-    UTF-8 JSON {"entities": [...], "relations": [...],
                            "edges": [[h, r, t], ...], "names": {...}}
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MalformedLine, MissingFile, SnapshotError, UnknownEntity

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"RXKG"
SNAPSHOT_VERSION = 1

COMPOUND = "compound"
DISEASE = "disease"
OTHER = "other"


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if not (self.head and self.relation and self.tail):
            raise ValueError(f"empty field in triple {self!r}")


@dataclass
class LoadReport:
    lines: int = 0
    comments: int = 0
    malformed: int = 0
    duplicates: int = 0
    malformed_lines: list[int] = field(default_factory=list)


def entity_kind(entity_id: str) -> str:
    prefix, sep, _ = entity_id.partition("::")
    if not sep:
        return OTHER
    prefix = prefix.lower()
    if prefix == "compound":
        return COMPOUND
    if prefix == "disease":
        return DISEASE
    return OTHER


def default_name(entity_id: str) -> str:
    """Human-readable name used in retrieval queries: ``Compound::beta_blocker`` -> ``beta blocker``."""
    _, sep, rest = entity_id.partition("::")
    return (rest if sep else entity_id).replace("_", " ").strip()


class KnowledgeGraph:
    """Immutable after construction; safe to share between readers."""

    def __init__(self, entities: list[str], relations: list[str],
                 edges: list[tuple[int, int, int]], names: dict[str, str] | None = None):
        self.entities = list(entities)
        self.relations = list(relations)
        self.edges = [tuple(e) for e in edges]
        self.names = dict(names or {})
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.kinds = [entity_kind(e) for e in self.entities]
        self.load_report = LoadReport()

        # adjacency[e] holds (neighbor, relation, edge_id), sorted by neighbor then relation
        adj: list[list[tuple[int, int, int]]] = [[] for _ in self.entities]
        for k, (h, r, t) in enumerate(self.edges):
            adj[h].append((t, r, k))
            adj[t].append((h, r, k))
        for lst in adj:
            lst.sort()
        self._adj = adj

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self.edges == other.edges and self.names == other.names)

    def __repr__(self):
        return (f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
                f"edges={self.num_edges})")

    def index(self, entity: str | int) -> int:
        """Resolve an entity id or index to a validated index."""
        if isinstance(entity, str):
            try:
                return self.entity_index[entity]
            except KeyError:
                raise UnknownEntity(entity) from None
        if not 0 <= int(entity) < len(self.entities):
            raise UnknownEntity(entity)
        return int(entity)

    def kind(self, e: int) -> str:
        return self.kinds[self.index(e)]

    def name(self, e: str | int) -> str:
        ent = self.entities[self.index(e)]
        return self.names.get(ent) or default_name(ent)

    def of_kind(self, kind: str) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == kind]

    def relation_ids(self, relation_filter: Iterable[str] | None) -> set[int] | None:
        if relation_filter is None:
            return None
        return {self.relation_index[r] for r in relation_filter if r in self.relation_index}

    def incident(self, e: int):
        """Raw adjacency entries (neighbor, relation, edge_id) for `e`."""
        return self._adj[self.index(e)]


def build_graph(triples: Iterable[Triple], dedupe: bool = True,
                names: dict[str, str] | None = None) -> KnowledgeGraph:
    """Build a graph from triples. With ``dedupe=False`` repeated triples become parallel edges."""
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    edges: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    duplicates = 0
    for t in triples:
        h = entities.setdefault(t.head, len(entities))
        r = relations.setdefault(t.relation, len(relations))
        tl = entities.setdefault(t.tail, len(entities))
        key = (h, r, tl)
        if key in seen:
            duplicates += 1
            if dedupe:
                continue
        seen.add(key)
        edges.append(key)
    g = KnowledgeGraph(list(entities), list(relations), edges, names)
    g.load_report.duplicates = duplicates
    return g


def read_triples(path: str | Path, strict: bool = False, report: LoadReport | None = None):
    """Yield triples from a TSV file. Lenient mode skips malformed lines and counts them."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    report = report if report is not None else LoadReport()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            report.lines += 1
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                report.comments += 1
                continue
            cols = line.split("\t")
            if len(cols) != 3 or not all(c.strip() for c in cols):
                if strict:
                    raise MalformedLine(line_no, line)
                report.malformed += 1
                report.malformed_lines.append(line_no)
                continue
            yield Triple(*(c.strip() for c in cols))


def load_triples(path: str | Path, dedupe: bool = True, strict: bool = False,
                 names: dict[str, str] | None = None) -> KnowledgeGraph:
    report = LoadReport()
    g = build_graph(read_triples(path, strict=strict, report=report), dedupe=dedupe, names=names)
    report.duplicates = g.load_report.duplicates
    g.load_report = report
    if report.malformed:
        log.warning("%s: skipped %d malformed line(s)", path, report.malformed)
    return g


def load_names(path: str | Path) -> dict[str, str]:
    """Two-column TSV: entity id, display name."""
    names = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            ent, _, name = line.rstrip("\r\n").partition("\t")
            if name.strip():
                names[ent.strip()] = name.strip()
    return names


def neighbors(g: KnowledgeGraph, e: int | str,
              relation_filter: Iterable[str] | None = None) -> list[tuple[int, int]]:
    """All edges incident to `e` as (relation index, neighbor index).

    Ordered by ascending neighbor index, then relation index. A self-loop
    appears once per direction.
    """
    rels = g.relation_ids(relation_filter)
    return [(r, n) for n, r, _ in g.incident(e) if rels is None or r in rels]


def edge_count(g: KnowledgeGraph, a: int | str, b: int | str,
               relation_filter: Iterable[str] | None = None) -> int:
    a, b = g.index(a), g.index(b)
    rels = g.relation_ids(relation_filter)
    edge_ids = {k for n, r, k in g.incident(a) if n == b and (rels is None or r in rels)}
    return len(edge_ids)


def save_snapshot(g: KnowledgeGraph, path: str | Path) -> None:
    payload = {
        "entities": g.entities,
        "relations": g.relations,
        "edges": [list(e) for e in g.edges],
        "names": dict(sorted(g.names.items())),
    }
    body = json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    Path(path).write_bytes(SNAPSHOT_MAGIC + bytes([SNAPSHOT_VERSION]) + body)


def load_snapshot(path: str | Path) -> KnowledgeGraph:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a graph snapshot")
    if raw[4] != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {raw[4]}")
    try:
        payload = json.loads(raw[5:].decode("utf-8"))
        return KnowledgeGraph(payload["entities"], payload["relations"],
                              [tuple(e) for e in payload["edges"]], payload.get("names"))
    except (ValueError, KeyError) as exc:
        raise SnapshotError(f"{path}: corrupt snapshot ({exc})") from exc
