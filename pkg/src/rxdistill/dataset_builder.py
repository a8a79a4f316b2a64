"""Instruction records: one rendered prompt per disease-drug set.

Record schema (JSONL, one object per line, ``version`` = 1)::

    id, version, disease, disease_id,
    candidate_1, candidate_1_id, candidate_2, candidate_2_id,
    label             1 or 2, the slot holding the relevant drug
    effect_label      "negative" | "less_positive" (describes the other drug)
    background_1/2    [{"source_id": str, "text": str}, ...]
    prompt            rendered instruction
    shuffle_seed, template_version

The expected answer grammar, shared with the teacher parser::

    ANSWER: <1|2>
    REASON: <free text>
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import MalformedTemplate, MissingBackgroundKey, UnboundPlaceholder, UnreadableFile

RECORD_VERSION = 1
PLACEHOLDERS = ("disease", "candidate_1", "candidate_2", "background_1", "background_2",
                "format_instructions")
EFFECT_LABELS = ("negative", "less_positive")
NO_BACKGROUND = "(no background retrieved)"

FORMAT_INSTRUCTIONS = (
    "Reply with exactly two lines:\n"
    "ANSWER: <1|2>\n"
    "REASON: <why the chosen drug is the better treatment, citing the background>"
)

DEFAULT_TEMPLATE = """\
You are a biomedical assistant helping with drug repurposing. Decide which of \
the two candidate compounds is the better treatment for the disease, using the \
background evidence given for each candidate.

Disease: {disease}

Candidate 1: {candidate_1}
Background for candidate 1:
{background_1}

Candidate 2: {candidate_2}
Background for candidate 2:
{background_2}

{format_instructions}
"""

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    text: str = DEFAULT_TEMPLATE
    version: str = "v1"

    def __post_init__(self):
        found = _PLACEHOLDER.findall(self.text)
        for name in PLACEHOLDERS:
            n = found.count(name)
            if n != 1:
                raise MalformedTemplate(f"placeholder {{{name}}} appears {n} times, expected once")
        extra = sorted(set(found) - set(PLACEHOLDERS))
        if extra:
            raise MalformedTemplate(f"unknown placeholder(s): {', '.join(extra)}")
        stray = _PLACEHOLDER.sub("", self.text)
        if "{" in stray or "}" in stray:
            raise MalformedTemplate("stray brace outside a placeholder")

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        text = Path(path).read_text(encoding="utf-8")
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
        return cls(text, f"file-{digest}")

    def render(self, values: Mapping[str, str]) -> str:
        missing = [p for p in PLACEHOLDERS if values.get(p) is None]
        if missing:
            raise UnboundPlaceholder(f"no value for {', '.join(missing)}")
        # single pass, so substituted text is never re-scanned for placeholders
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], self.text)


def format_background(chunks: Sequence) -> str:
    """Chunks may be plain strings or (source_id, text) pairs / dicts."""
    if not chunks:
        return NO_BACKGROUND
    lines = []
    for c in chunks:
        if isinstance(c, str):
            lines.append(f"- {c}")
        else:
            source_id, text = (c["source_id"], c["text"]) if isinstance(c, Mapping) else c
            lines.append(f"- [{source_id}] {text}")
    return "\n".join(lines)


def render_prompt(tpl: PromptTemplate, disease: str, candidate_1: str, candidate_2: str,
                  bg1: Sequence = (), bg2: Sequence = ()) -> str:
    return tpl.render({
        "disease": disease,
        "candidate_1": candidate_1,
        "candidate_2": candidate_2,
        "background_1": format_background(bg1),
        "background_2": format_background(bg2),
        "format_instructions": FORMAT_INSTRUCTIONS,
    })


@dataclass
class TrainingRecord:
    id: str
    disease: str
    candidate_1: str
    candidate_2: str
    label: int
    effect_label: str
    background_1: list[dict] = field(default_factory=list)
    background_2: list[dict] = field(default_factory=list)
    prompt: str = ""
    disease_id: str = ""
    candidate_1_id: str = ""
    candidate_2_id: str = ""
    shuffle_seed: int = 0
    template_version: str = ""
    version: int = RECORD_VERSION

    @property
    def relevant_name(self) -> str:
        return self.candidate_1 if self.label == 1 else self.candidate_2

    def candidate(self, slot: int) -> str:
        return self.candidate_1 if slot == 1 else self.candidate_2

    def background(self, slot: int) -> list[dict]:
        return self.background_1 if slot == 1 else self.background_2

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRecord":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def record_violations(rec: TrainingRecord) -> list[str]:
    out = []
    if rec.label not in (1, 2):
        out.append(f"label {rec.label!r} not in {{1, 2}}")
    if not rec.candidate_1 or rec.candidate_1 == rec.candidate_2:
        out.append("candidates must be distinct and non-empty")
    if rec.effect_label not in EFFECT_LABELS:
        out.append(f"effect_label {rec.effect_label!r} not in {EFFECT_LABELS}")
    for name, value in (("disease", rec.disease), ("candidate_1", rec.candidate_1),
                        ("candidate_2", rec.candidate_2)):
        if not value or value not in rec.prompt:
            out.append(f"{name} not embedded in prompt")
    for c in rec.background_1 + rec.background_2:
        if c.get("text", "") not in rec.prompt:
            out.append("chunk not embedded in prompt")
            break
    return out


def _chunks_of(bg) -> list[dict]:
    if bg is None:
        return []
    chunks = getattr(bg, "chunks", bg)
    out = []
    for c in chunks:
        if isinstance(c, Mapping):
            out.append({"source_id": c.get("source_id", ""), "text": c["text"]})
        elif isinstance(c, str):
            out.append({"source_id": "", "text": c})
        else:
            out.append({"source_id": c.source_id, "text": c.text})
    return out


def _label_slots(n: int, seed: int) -> list[int]:
    """Balanced, shuffled slot (1 or 2) for the relevant drug of each record."""
    rng = random.Random(seed)
    slots = [1] * (n // 2) + [2] * (n // 2)
    if n % 2:
        slots.append(rng.choice((1, 2)))
    rng.shuffle(slots)
    return slots


def _fit(tpl, names, bg1, bg2, max_prompt_chars):
    prompt = render_prompt(tpl, *names, bg1, bg2)
    while max_prompt_chars and len(prompt) > max_prompt_chars and (bg1 or bg2):
        if len(bg1) >= len(bg2):
            bg1 = bg1[:-1]
        else:
            bg2 = bg2[:-1]
        prompt = render_prompt(tpl, *names, bg1, bg2)
    return prompt, bg1, bg2


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def build_dataset(sets: Sequence[Mapping], backgrounds: Mapping, tpl: PromptTemplate | None = None,
                  shuffle_seed: int = 0, max_prompt_chars: int | None = None,
                  extra_config: Mapping | None = None) -> tuple[list[TrainingRecord], dict]:
    """Assemble records from sampled sets (as written to sets.jsonl).

    `backgrounds` maps (disease id, drug id) to a BackgroundSet or a list of
    chunks; both candidates of every set must be present (empty is fine).
    """
    tpl = tpl or PromptTemplate()
    slots = _label_slots(len(sets), shuffle_seed)
    records = []
    for s, slot in zip(sets, slots):
        d_id, rel_id, irr_id = s["disease"], s["relevant"], s["irrelevant"]
        for key in ((d_id, rel_id), (d_id, irr_id)):
            if key not in backgrounds:
                raise MissingBackgroundKey(f"no background for {key}")
        rel = (s.get("relevant_name") or rel_id, rel_id, _chunks_of(backgrounds[(d_id, rel_id)]))
        irr = (s.get("irrelevant_name") or irr_id, irr_id, _chunks_of(backgrounds[(d_id, irr_id)]))
        first, second = (rel, irr) if slot == 1 else (irr, rel)
        disease = s.get("disease_name") or d_id
        prompt, bg1, bg2 = _fit(tpl, (disease, first[0], second[0]), first[2], second[2],
                                max_prompt_chars)
        rid = "rec-" + hashlib.sha1(f"{d_id}|{rel_id}|{irr_id}".encode("utf-8")).hexdigest()[:12]
        records.append(TrainingRecord(
            id=rid, disease=disease, candidate_1=first[0], candidate_2=second[0], label=slot,
            effect_label=s.get("effect_label", "negative"), background_1=bg1, background_2=bg2,
            prompt=prompt, disease_id=d_id, candidate_1_id=first[1], candidate_2_id=second[1],
            shuffle_seed=shuffle_seed, template_version=tpl.version,
        ))
    manifest = {
        "version": RECORD_VERSION,
        "records": len(records),
        "label_1": sum(r.label == 1 for r in records),
        "label_2": sum(r.label == 2 for r in records),
        "seed": shuffle_seed,
        "template_version": tpl.version,
        "config_digest": config_digest({"template": tpl.text, "seed": shuffle_seed,
                                        "max_prompt_chars": max_prompt_chars,
                                        **(extra_config or {})}),
    }
    return records, manifest


def write_dataset(records: Iterable[TrainingRecord], path: str | Path, manifest: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    if manifest is not None:
        (path.parent / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(path: str | Path) -> list[TrainingRecord]:
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(str(path))
    with path.open(encoding="utf-8") as fh:
        return [TrainingRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass
class ValidationReport:
    records: int = 0
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(path: str | Path) -> ValidationReport:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    report = ValidationReport()
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.records += 1
            try:
                d = json.loads(line)
                rec = TrainingRecord(**d)
            except (ValueError, TypeError) as exc:
                report.violations.append((line_no, f"unparseable record: {exc}"))
                continue
            report.violations.extend((line_no, v) for v in record_violations(rec))
    return report
