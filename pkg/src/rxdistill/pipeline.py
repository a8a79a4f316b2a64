"""Config-driven pipeline runs with digest manifests.

Every stage reads and writes fixed artifact names under ``paths.out_dir``:

    build-kg       graph.kgsnap
    train-embed    embeddings.emb, embed_losses.csv
    sample         sets.jsonl, sample_skips.jsonl, drugs.txt
    ingest-corpus  store/
    build-index    index/
    retrieve       candidates.jsonl
    rerank         backgrounds/
    build-dataset  exprxrec.jsonl, manifest.json
    distill        labeled.jsonl, quarantine.jsonl, student.bin, losses.csv, student_out.jsonl
    evaluate       report.json

``run_manifest.json`` records the config digest, the seed, per-stage input
and output digests, and timings. Caches live in ``cache/`` and are not
digested.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from . import corpus_ingest, dataset_builder, distill, kg_embed, kg_store, metrics, pair_sampler, reranker, search_index
from .errors import ConfigInvalid, MissingArtifact, MissingInput, PipelineError, StageError

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
MANIFEST_NAME = "run_manifest.json"


@dataclass
class PathsConfig:
    kg: str = "kg.tsv"
    names: str | None = None
    pmc: str | None = "pmc"
    trials: str | None = "trials"
    template: str | None = None
    out_dir: str = "run"


@dataclass
class KgConfig:
    dedupe: bool = True
    strict: bool = False


@dataclass
class EmbedConfig:
    dim: int = 64
    epochs: int = 200
    learning_rate: float = 0.05
    margin: float = 1.0
    negatives_per_positive: int = 2
    relation_l2: float = 1.0


@dataclass
class SampleConfig:
    treatment_relations: list[str] = field(default_factory=lambda: list(pair_sampler.DEFAULT_TREATMENT_RELATIONS))
    pool_top_m: int = 50
    edge_weight: float = 1.0
    emb_weight: float = 0.01
    diseases: str | list[str] = "all"


@dataclass
class IndexConfig:
    k1: float = 1.2
    b: float = 0.75
    max_chunk_chars: int = corpus_ingest.DEFAULT_MAX_CHUNK_CHARS


@dataclass
class RetrieveConfig:
    k: int = search_index.DEFAULT_K


@dataclass
class RerankConfig:
    embedder: str = "hash"
    embed_dim: int = 256
    threshold: float = reranker.DEFAULT_THRESHOLD
    max_chunks: int = reranker.DEFAULT_MAX_CHUNKS
    max_in_flight: int = 1


@dataclass
class DatasetConfig:
    max_prompt_chars: int | None = None


@dataclass
class DistillSection:
    teacher: str = "stub"
    teacher_model: str = "teacher"
    epochs: int = 200
    learning_rate: float = 0.5
    lam: float = 1.0
    n_features: int = 4096


@dataclass
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    kg: KgConfig = field(default_factory=KgConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    retrieve: RetrieveConfig = field(default_factory=RetrieveConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    base_dir: Path = field(default=Path("."), metadata={"internal": True})

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def out_dir(self) -> Path:
        return self.path("out_dir")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        """Identity of the experiment; where outputs land is not part of it."""
        d = self.to_dict()
        d["paths"].pop("out_dir")
        return dataset_builder.config_digest(d)


def _check_type(path: str, key: str, value, annotation: str):
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "str | None": lambda v: v is None or isinstance(v, str),
        "int | None": lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
        "list[str]": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
        "str | list[str]": lambda v: isinstance(v, str) or (isinstance(v, list) and all(isinstance(x, str) for x in v)),
    }[annotation]
    if not ok(value):
        raise ConfigInvalid(path, key, f"expected {annotation}, got {value!r}")


def _from_dict(cls, data: dict, path: str, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigInvalid(path, prefix or "<root>", "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in fields:
            raise ConfigInvalid(path, dotted)
        f = fields[key]
        if dataclasses.is_dataclass(f.default_factory) if f.default_factory is not dataclasses.MISSING else False:
            kwargs[key] = _from_dict(f.default_factory, value, path, dotted + ".")
        else:
            _check_type(path, dotted, value, f.type)
            kwargs[key] = value
    return cls(**kwargs)


def _validate_ranges(cfg: PipelineConfig, path: str) -> None:
    checks = [
        ("embed", lambda: embed_config(cfg)),
        ("sample", lambda: sampler_config(cfg)),
        ("distill", lambda: distill_config(cfg)),
        ("dataset", lambda: dataset_builder.PromptTemplate.from_file(cfg.path("template"))
         if cfg.paths.template else None),
    ]
    for section, check in checks:
        try:
            check()
        except (ValueError, PipelineError) as exc:
            raise ConfigInvalid(path, section, str(exc)) from exc
    if cfg.version != CONFIG_VERSION:
        raise ConfigInvalid(path, "version", f"unsupported config version {cfg.version}")
    if cfg.retrieve.k < 1:
        raise ConfigInvalid(path, "retrieve.k", "must be >= 1")
    if not -1.0 <= cfg.rerank.threshold <= 1.0:
        raise ConfigInvalid(path, "rerank.threshold", "must lie in [-1, 1]")
    if cfg.rerank.max_chunks < 1 or cfg.rerank.max_in_flight < 1:
        raise ConfigInvalid(path, "rerank", "max_chunks and max_in_flight must be >= 1")
    if cfg.rerank.embedder not in ("hash", "bow", "remote"):
        raise ConfigInvalid(path, "rerank.embedder", "expected hash, bow or remote")
    if cfg.distill.teacher not in ("stub", "remote"):
        raise ConfigInvalid(path, "distill.teacher", "expected stub or remote")
    if cfg.index.max_chunk_chars < 1 or cfg.index.k1 < 0 or not 0 <= cfg.index.b <= 1:
        raise ConfigInvalid(path, "index", "need max_chunk_chars >= 1, k1 >= 0, 0 <= b <= 1")


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Load and validate a JSON config. `overrides` maps dotted keys to values (flags win)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigInvalid(str(path), "<file>", "config file not found") from None
    except ValueError as exc:
        raise ConfigInvalid(str(path), "<file>", f"invalid JSON: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = _from_dict(PipelineConfig, data, str(path))
    cfg.base_dir = path.resolve().parent
    _validate_ranges(cfg, str(path))
    return cfg


def embed_config(cfg: PipelineConfig) -> kg_embed.EmbedTrainConfig:
    return kg_embed.EmbedTrainConfig(seed=cfg.seed, **dataclasses.asdict(cfg.embed))


def sampler_config(cfg: PipelineConfig) -> pair_sampler.SamplerConfig:
    s = cfg.sample
    return pair_sampler.SamplerConfig(tuple(s.treatment_relations), s.pool_top_m, s.edge_weight,
                                      s.emb_weight, cfg.seed)


def distill_config(cfg: PipelineConfig) -> distill.DistillConfig:
    d = cfg.distill
    return distill.DistillConfig(d.epochs, d.learning_rate, d.lam, cfg.seed, d.n_features)


# --- digests --------------------------------------------------------------

def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digest(path: Path) -> str:
    """sha256 of a file, or of the sorted (relative path, file digest) list of a directory."""
    if path.is_file():
        return file_digest(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(f"{p.relative_to(path).as_posix()}\0{file_digest(p)}\n".encode("utf-8"))
        return "dir:" + h.hexdigest()
    raise MissingArtifact(str(path))


# --- stages ---------------------------------------------------------------

STAGES = ("build-kg", "train-embed", "sample", "ingest-corpus", "build-index", "retrieve",
          "rerank", "build-dataset", "distill", "evaluate")


def _need(stage: str, *paths: Path | None) -> None:
    for p in paths:
        if p is None or not p.exists():
            raise MissingInput(stage, p)


def stage_io(cfg: PipelineConfig, stage: str) -> tuple[list[Path], list[Path]]:
    out = cfg.out_dir
    inputs = {
        "build-kg": [cfg.path("kg")] + ([cfg.path("names")] if cfg.paths.names else []),
        "train-embed": [out / "graph.kgsnap"],
        "sample": [out / "graph.kgsnap", out / "embeddings.emb"],
        "ingest-corpus": [p for p in (cfg.path("pmc"), cfg.path("trials")) if p] + [out / "drugs.txt"],
        "build-index": [out / "store"],
        "retrieve": [out / "index", out / "sets.jsonl"],
        "rerank": [out / "candidates.jsonl"],
        "build-dataset": [out / "sets.jsonl", out / "backgrounds"]
                         + ([cfg.path("template")] if cfg.paths.template else []),
        "distill": [out / "exprxrec.jsonl"],
        "evaluate": [out / "labeled.jsonl", out / "student_out.jsonl"],
    }[stage]
    outputs = {
        "build-kg": ["graph.kgsnap"],
        "train-embed": ["embeddings.emb", "embed_losses.csv"],
        "sample": ["sets.jsonl", "sample_skips.jsonl", "drugs.txt"],
        "ingest-corpus": ["store"],
        "build-index": ["index"],
        "retrieve": ["candidates.jsonl"],
        "rerank": ["backgrounds"],
        "build-dataset": ["exprxrec.jsonl", "manifest.json"],
        "distill": ["labeled.jsonl", "quarantine.jsonl", "student.bin", "losses.csv", "student_out.jsonl"],
        "evaluate": ["report.json"],
    }[stage]
    return inputs, [out / name for name in outputs]


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _embedder(cfg: PipelineConfig):
    base = reranker.make_embedder(cfg.rerank.embedder, cfg.rerank.embed_dim, cfg.seed)
    cache = reranker.EmbeddingCache(cfg.out_dir / "cache" / "embeddings.json", base.identity)
    return reranker.CachedEmbedder(base, cache)


def _run_build_kg(cfg):
    names = kg_store.load_names(cfg.path("names")) if cfg.paths.names else None
    g = kg_store.load_triples(cfg.path("kg"), dedupe=cfg.kg.dedupe, strict=cfg.kg.strict, names=names)
    kg_store.save_snapshot(g, cfg.out_dir / "graph.kgsnap")
    return {"entities": g.num_entities, "relations": g.num_relations, "edges": g.num_edges,
            "malformed_lines": g.load_report.malformed}


def _run_train_embed(cfg):
    g = kg_store.load_snapshot(cfg.out_dir / "graph.kgsnap")
    res = kg_embed.train(g, embed_config(cfg))
    kg_embed.save_embeddings(res.table, cfg.out_dir / "embeddings.emb")
    with (cfg.out_dir / "embed_losses.csv").open("w") as fh:
        fh.write("epoch,mean_loss\n")
        fh.writelines(f"{i},{x!r}\n" for i, x in enumerate(res.epoch_losses))
    return {"first_loss": res.epoch_losses[0] if res.epoch_losses else None,
            "final_loss": res.epoch_losses[-1] if res.epoch_losses else None}


def _run_sample(cfg):
    out = cfg.out_dir
    g = kg_store.load_snapshot(out / "graph.kgsnap")
    table = kg_embed.load_embeddings(out / "embeddings.emb")
    diseases = (g.of_kind(kg_store.DISEASE) if cfg.sample.diseases == "all"
                else list(cfg.sample.diseases))
    sets, skips = pair_sampler.sample_corpus_sets(g, table, diseases, sampler_config(cfg))
    pair_sampler.write_sets(g, sets, out / "sets.jsonl")
    _write_jsonl(out / "sample_skips.jsonl",
                 [{"disease": g.entities[s.disease] if isinstance(s.disease, int) and 0 <= s.disease < g.num_entities
                   else str(s.disease), "reason": s.reason} for s in skips])
    drugs = sorted({g.name(x) for s in sets for x in (s.relevant, s.irrelevant)})
    (out / "drugs.txt").write_text("".join(d + "\n" for d in drugs), encoding="utf-8")
    return {"sets": len(sets), "skipped": len(skips)}


def _run_ingest(cfg):
    drugs = corpus_ingest.read_drug_names(cfg.out_dir / "drugs.txt")
    report = corpus_ingest.ingest_corpus(cfg.path("pmc"), cfg.path("trials"), drugs, cfg.out_dir / "store")
    return dataclasses.asdict(report)


def _run_build_index(cfg):
    idx = search_index.index_store(cfg.out_dir / "store", cfg.out_dir / "index",
                                   cfg.index.max_chunk_chars, cfg.index.k1, cfg.index.b)
    return {"chunks": idx.N, "terms": len(idx.postings)}


def _pairs(sets):
    for s in sets:
        for drug, name in ((s["relevant"], s["relevant_name"]), (s["irrelevant"], s["irrelevant_name"])):
            yield s["disease"], s["disease_name"], drug, name


def _run_retrieve(cfg):
    out = cfg.out_dir
    idx, table = search_index.load_index_dir(out / "index")
    rows, seen = [], set()
    for d_id, d_name, c_id, c_name in _pairs(_read_jsonl(out / "sets.jsonl")):
        if (d_id, c_id) in seen:
            continue
        seen.add((d_id, c_id))
        cands = reranker.retrieve_candidates(idx, table, d_name, c_name, cfg.retrieve.k)
        rows.append({"disease": d_id, "drug": c_id, "disease_name": d_name, "drug_name": c_name,
                     "candidates": [dataclasses.asdict(c) for c in cands]})
    _write_jsonl(out / "candidates.jsonl", rows)
    return {"pairs": len(rows), "candidates": sum(len(r["candidates"]) for r in rows)}


def _run_rerank(cfg):
    out = cfg.out_dir
    emb = _embedder(cfg)
    rows = []
    for row in _read_jsonl(out / "candidates.jsonl"):
        cands = [reranker.Candidate(**c) for c in row["candidates"]]
        text = reranker.pair_text(row["disease_name"], row["drug_name"])
        bg = reranker.rerank(emb, text, cands, cfg.rerank.threshold, cfg.rerank.max_chunks,
                             max_in_flight=cfg.rerank.max_in_flight,
                             pair=(row["disease_name"], row["drug_name"]))
        rows.append(reranker.background_to_json(row["disease"], row["drug"], bg))
    emb.cache.save()
    (out / "backgrounds").mkdir(exist_ok=True)
    _write_jsonl(out / "backgrounds" / "backgrounds.jsonl", rows)
    return {"pairs": len(rows), "chunks_kept": sum(len(r["chunks"]) for r in rows)}


def load_backgrounds(bg_dir: Path) -> dict:
    out = {}
    for row in _read_jsonl(Path(bg_dir) / "backgrounds.jsonl"):
        key, bg = reranker.background_from_json(row)
        out[key] = bg
    return out


def _run_build_dataset(cfg):
    out = cfg.out_dir
    tpl = (dataset_builder.PromptTemplate.from_file(cfg.path("template")) if cfg.paths.template
           else dataset_builder.PromptTemplate())
    records, manifest = dataset_builder.build_dataset(
        _read_jsonl(out / "sets.jsonl"), load_backgrounds(out / "backgrounds"), tpl, cfg.seed,
        cfg.dataset.max_prompt_chars, extra_config={"pipeline": cfg.digest()})
    dataset_builder.write_dataset(records, out / "exprxrec.jsonl", manifest)
    return {"records": len(records)}


def make_teacher(cfg: PipelineConfig, records):
    if cfg.distill.teacher == "stub":
        return distill.evidence_teacher(records)
    return distill.RemoteTeacher(model=cfg.distill.teacher_model)


def _run_distill(cfg):
    out = cfg.out_dir
    records = dataset_builder.read_dataset(out / "exprxrec.jsonl")
    teacher = make_teacher(cfg, records)
    cache = distill.ReplyCache(out / "cache" / "teacher_replies.json")
    labeled, quarantine = distill.label_with_teacher(teacher, records, cache)
    _write_jsonl(out / "labeled.jsonl", [item.to_dict() for item in labeled])
    _write_jsonl(out / "quarantine.jsonl", quarantine)
    embedder = reranker.make_embedder(cfg.rerank.embedder, cfg.rerank.embed_dim, cfg.seed)
    res = distill.train_reference_student(labeled, distill_config(cfg), embedder)
    res.student.save(out / "student.bin")
    distill.write_loss_curve(res.curve, out / "losses.csv")
    _write_jsonl(out / "student_out.jsonl", distill.student_outputs(res.student, [i.record for i in labeled]))
    return {"labeled": len(labeled), "quarantined": len(quarantine), "teacher_calls": getattr(teacher, "calls", None),
            "train_accuracy": res.accuracy() if res.prepared else None}


def _run_evaluate(cfg):
    out = cfg.out_dir
    report = metrics.evaluate_run(_read_jsonl(out / "labeled.jsonl"), _read_jsonl(out / "student_out.jsonl"))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"f1_vs_teacher": report["selection_vs_teacher"]["f1"],
            "rouge_l_f1": report["rouge"]["rouge_l"]["f1"]}


RUNNERS = {
    "build-kg": _run_build_kg,
    "train-embed": _run_train_embed,
    "sample": _run_sample,
    "ingest-corpus": _run_ingest,
    "build-index": _run_build_index,
    "retrieve": _run_retrieve,
    "rerank": _run_rerank,
    "build-dataset": _run_build_dataset,
    "distill": _run_distill,
    "evaluate": _run_evaluate,
}


# --- run / verify ---------------------------------------------------------

def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(path.resolve(), base.resolve())


def _load_manifest(out: Path) -> dict:
    path = out / MANIFEST_NAME
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {}


def run(stage: str, cfg: PipelineConfig) -> dict:
    """Run one stage (or ``all`` in dependency order) and update the run manifest."""
    if stage != "all" and stage not in RUNNERS:
        raise PipelineError(f"unknown stage {stage!r}")
    stages = STAGES if stage == "all" else (stage,)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(out)
    if manifest.get("config_digest") != cfg.digest():
        manifest = {}
    manifest.update({"version": 1, "tool_version": __version__, "config_digest": cfg.digest(),
                     "seed": cfg.seed, "config": cfg.to_dict()})
    manifest.setdefault("stages", {})
    for name in stages:
        inputs, outputs = stage_io(cfg, name)
        _need(name, *inputs)
        t0 = time.perf_counter()
        try:
            summary = RUNNERS[name](cfg)
        except StageError as exc:
            raise StageError(f"[{name}] {exc}") from exc
        except PipelineError:
            raise
        except Exception as exc:
            raise StageError(f"[{name}] {type(exc).__name__}: {exc}") from exc
        manifest["stages"][name] = {
            "inputs": {_rel(p, out): digest(p) for p in inputs},
            "outputs": {_rel(p, out): digest(p) for p in outputs},
            "seconds": round(time.perf_counter() - t0, 4),
            "summary": summary,
        }
        log.info("%s done in %.2fs: %s", name, manifest["stages"][name]["seconds"], summary)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


@dataclass
class VerifyReport:
    checked: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify(manifest_path: str | Path) -> VerifyReport:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingArtifact(str(manifest_path))
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    report = VerifyReport()
    seen = {}
    for stage in manifest.get("stages", {}).values():
        for rel, expected in {**stage["inputs"], **stage["outputs"]}.items():
            seen.setdefault(rel, expected)
    for rel, expected in sorted(seen.items()):
        path = base / rel
        if not path.exists():
            raise MissingArtifact(str(path))
        report.checked += 1
        if digest(path) != expected:
            report.mismatches.append(rel)
    return report
