"""Teacher labelling, distillation losses, and a desk-scale reference student.

Losses for one record with student slot probabilities p, teacher choice t,
student rationale embedding r and teacher rationale embedding r_T::

    select_ce        = -ln max(p[t], 1e-12)                  (training)
    select_indicator = 1[argmax p != reference]              (evaluation)
    rationale_mse    = ||r - r_T||^2
    total            = select_ce + lam * rationale_mse

The reference student is a conditional logit over hashed bag-of-words
features of each candidate slot. Its rationale for slot i is the background
sentence closest to the (disease, drug) pair; during training r is the
probability-weighted mean of the two slot rationale embeddings, which keeps
the rationale term differentiable in the parameters.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import _http
from .dataset_builder import TrainingRecord
from .errors import (
    DegenerateDataset, DimensionMismatch, SnapshotError, TeacherUnavailable, UnparseableReply, ValidationError,
)
from .kg_embed import cosine
from .reranker import HashEmbedder, TextEmbedder, pair_text
from .search_index import tokenize

log = logging.getLogger(__name__)

P_FLOOR = 1e-12

# markdown emphasis around the labels ("**ANSWER:** 1") is tolerated
_ANSWER = re.compile(r"^[ \t*_]*answer[ \t*_]*:[ \t*_]*([12])\b", re.IGNORECASE | re.MULTILINE)
_REASON = re.compile(r"^[ \t*_]*reason[ \t*_]*:[ \t*_]*(.*)", re.IGNORECASE | re.MULTILINE | re.DOTALL)


@dataclass(frozen=True)
class TeacherLabel:
    selected: int
    rationale: str
    raw: str = ""


def parse_teacher_reply(raw: str) -> TeacherLabel:
    m_ans = _ANSWER.search(raw or "")
    m_rea = _REASON.search(raw or "")
    if not m_ans or not m_rea:
        raise UnparseableReply(raw or "")
    rationale = m_rea.group(1).strip()
    if not rationale:
        raise UnparseableReply(raw)
    return TeacherLabel(int(m_ans.group(1)), rationale, raw)


# --- losses ---------------------------------------------------------------

def selection_loss_ce(p: Sequence[float], teacher_selected: int) -> float:
    return -float(np.log(max(float(p[teacher_selected - 1]), P_FLOOR)))


def selection_loss_indicator(student_selected: int, reference_selected: int) -> int:
    return int(student_selected != reference_selected)


def rationale_loss(r_emb, rt_emb) -> float:
    r = np.asarray(r_emb, dtype=float)
    rt = np.asarray(rt_emb, dtype=float)
    if r.shape != rt.shape:
        raise DimensionMismatch(f"rationale embeddings of shape {r.shape} and {rt.shape}")
    diff = r - rt
    return float(diff @ diff)


def total_loss(select_ce: float, rationale_mse: float, lam: float) -> float:
    return select_ce + lam * rationale_mse


@dataclass(frozen=True)
class LossBreakdown:
    """Per-record losses, or their means over an epoch (then select_indicator is a rate)."""
    select_ce: float
    select_indicator: float
    rationale_mse: float
    lam: float
    total: float


# --- teachers -------------------------------------------------------------

class TeacherClient(Protocol):
    identity: str

    def complete(self, prompt: str) -> str: ...


class StubTeacher:
    """Offline teacher: `reply` maps a prompt to raw reply text. Counts calls."""

    def __init__(self, reply: Callable[[str], str] | str = "ANSWER: 1\nREASON: stub", identity: str = "stub"):
        self._reply = reply if callable(reply) else (lambda _prompt: reply)
        self.identity = identity
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        return self._reply(prompt)


def _first_sentence(text: str) -> str:
    m = re.search(r"(.+?[.!?])(\s|$)", text.strip(), re.DOTALL)
    return (m.group(1) if m else text).strip()


def evidence_teacher(records: Iterable[TrainingRecord]) -> StubTeacher:
    """Stub teacher that picks the sampler's relevant drug and cites its top background chunk."""
    replies = {}
    for r in records:
        bg = r.background(r.label)
        if bg:
            reason = f"{r.relevant_name} is better supported for {r.disease}: {_first_sentence(bg[0]['text'])}"
        else:
            reason = f"{r.relevant_name} has a direct treatment link to {r.disease} in the knowledge graph."
        replies[r.prompt] = f"ANSWER: {r.label}\nREASON: {reason}"

    def reply(prompt: str) -> str:
        return replies.get(prompt, "I cannot tell which candidate is better.")

    return StubTeacher(reply, identity="stub-evidence")


class RemoteTeacher:
    """POST {"model", "prompt", "max_tokens"} -> {"text"}; TEACHER_ENDPOINT / TEACHER_API_KEY."""

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, model: str = "teacher",
                 max_tokens: int = 256, timeout: float = 60.0, retries: int = 2, base_delay: float = 1.0):
        self.endpoint = endpoint or os.environ.get("TEACHER_ENDPOINT", "")
        if not self.endpoint:
            raise ValidationError("remote teacher needs TEACHER_ENDPOINT")
        self.api_key = api_key if api_key is not None else os.environ.get("TEACHER_API_KEY")
        self.model = model
        self.identity = f"remote-{model}"
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.retries = retries
        self.base_delay = base_delay

    def complete(self, prompt: str) -> str:
        def call():
            reply = _http.post_json(self.endpoint, {"model": self.model, "prompt": prompt,
                                                    "max_tokens": self.max_tokens},
                                    self.api_key, self.timeout)
            return str(reply["text"])

        try:
            return _http.with_retries(call, self.retries, self.base_delay, retry_on=_http.HTTP_ERRORS)
        except _http.HTTP_ERRORS as exc:
            raise TeacherUnavailable(f"{self.endpoint}: {exc}") from exc


class ReplyCache:
    """Raw teacher replies keyed by hash of (teacher identity, prompt)."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.replies: dict[str, str] = {}
        if self.path and self.path.exists():
            try:
                payload = json.loads(self.path.read_text(encoding="utf-8"))
                self.replies = dict(payload["replies"])
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("reply cache %s unreadable (%s); starting empty", self.path, exc)

    @staticmethod
    def key(identity: str, prompt: str) -> str:
        return hashlib.sha256(f"{identity}\x00{prompt}".encode("utf-8")).hexdigest()

    def get(self, identity, prompt):
        return self.replies.get(self.key(identity, prompt))

    def put(self, identity, prompt, raw):
        self.replies[self.key(identity, prompt)] = raw

    def save(self):
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps({"version": 1, "replies": dict(sorted(self.replies.items()))},
                                            indent=0, sort_keys=True), encoding="utf-8")


@dataclass
class LabeledRecord:
    record: TrainingRecord
    teacher: TeacherLabel

    def to_dict(self) -> dict:
        d = asdict(self.record)
        d["teacher"] = asdict(self.teacher)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledRecord":
        t = d["teacher"]
        return cls(TrainingRecord.from_dict(d), TeacherLabel(t["selected"], t["rationale"], t.get("raw", "")))


def label_with_teacher(client: TeacherClient, records: Iterable[TrainingRecord],
                       cache: ReplyCache | None = None) -> tuple[list[LabeledRecord], list[dict]]:
    """Annotate records with the teacher's choice and rationale.

    Unparseable replies go to the quarantine list with their raw text.
    """
    cache = cache if cache is not None else ReplyCache()
    labeled, quarantine = [], []
    for rec in records:
        raw = cache.get(client.identity, rec.prompt)
        if raw is None:
            raw = client.complete(rec.prompt)
            cache.put(client.identity, rec.prompt, raw)
        try:
            labeled.append(LabeledRecord(rec, parse_teacher_reply(raw)))
        except UnparseableReply:
            quarantine.append({"id": rec.id, "raw": raw, "error": "UnparseableReply"})
    cache.save()
    return labeled, quarantine


# --- reference student ----------------------------------------------------

@dataclass(frozen=True)
class DistillConfig:
    epochs: int = 200
    learning_rate: float = 0.5
    lam: float = 1.0
    seed: int = 0
    n_features: int = 4096
    init_scale: float = 0.01

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.lam < 0:
            raise ValueError("need epochs >= 0, learning_rate > 0, lam >= 0")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")


def _bucket(token: str, n: int) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little") % n


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+|\n+", text) if s.strip()]


@dataclass
class PreparedRecord:
    id: str
    features: np.ndarray        # (2, n_features)
    slot_rationales: list[str]  # extractive rationale per slot
    slot_embeddings: np.ndarray  # (2, embed_dim)
    target: int                 # teacher slot, 1 or 2
    teacher_embedding: np.ndarray
    sampler_label: int


STUDENT_MAGIC = b"RXST"
STUDENT_VERSION = 1


class ReferenceStudent:
    """Conditional logit over per-slot hashed bag-of-words features."""

    def __init__(self, n_features: int = 4096, seed: int = 0, embedder: TextEmbedder | None = None,
                 init_scale: float = 0.01):
        self.n_features = n_features
        self.embedder = embedder or HashEmbedder()
        rng = np.random.default_rng(seed)
        self.theta = rng.normal(0.0, init_scale, n_features)

    @property
    def parameters(self) -> np.ndarray:
        return self.theta

    def update(self, gradient: np.ndarray, learning_rate: float) -> None:
        self.theta = self.theta - learning_rate * gradient

    def slot_features(self, rec: TrainingRecord, slot: int) -> np.ndarray:
        v = np.zeros(self.n_features)
        for tok in tokenize(rec.candidate(slot)):
            v[_bucket("name:" + tok, self.n_features)] += 1.0
        for chunk in rec.background(slot):
            for tok in tokenize(chunk["text"]):
                v[_bucket("bg:" + tok, self.n_features)] += 1.0
        n = np.linalg.norm(v)
        return v / n if n else v

    def features(self, rec: TrainingRecord) -> np.ndarray:
        return np.stack([self.slot_features(rec, 1), self.slot_features(rec, 2)])

    def slot_rationale(self, rec: TrainingRecord, slot: int) -> str:
        cand = rec.candidate(slot)
        sents = [s for c in rec.background(slot) for s in _sentences(c["text"])]
        if not sents:
            return f"{cand} is the better-supported treatment for {rec.disease}."
        q = self.embedder.embed(pair_text(rec.disease, cand))
        scores = [cosine(q, self.embedder.embed(s)) for s in sents]
        return sents[int(np.argmax(scores))]

    def predict(self, rec: TrainingRecord) -> tuple[np.ndarray, str]:
        p = softmax(self.features(rec) @ self.theta)
        return p, self.slot_rationale(rec, int(np.argmax(p)) + 1)

    def prepare(self, item: LabeledRecord) -> PreparedRecord:
        rec = item.record
        rats = [self.slot_rationale(rec, 1), self.slot_rationale(rec, 2)]
        return PreparedRecord(
            id=rec.id,
            features=self.features(rec),
            slot_rationales=rats,
            slot_embeddings=np.stack([self.embedder.embed(r) for r in rats]),
            target=item.teacher.selected,
            teacher_embedding=np.asarray(self.embedder.embed(item.teacher.rationale), dtype=float),
            sampler_label=rec.label,
        )

    def save(self, path: str | Path) -> None:
        """Magic, version byte, uint32 feature count, little-endian float64 weights.

        Hand-rolled rather than npz so the file carries no zip timestamps.
        """
        theta = np.ascontiguousarray(self.theta, dtype="<f8")
        Path(path).write_bytes(STUDENT_MAGIC + bytes([STUDENT_VERSION])
                               + self.n_features.to_bytes(4, "little") + theta.tobytes())

    @classmethod
    def load(cls, path: str | Path, embedder: TextEmbedder | None = None) -> "ReferenceStudent":
        raw = Path(path).read_bytes()
        if len(raw) < 9 or raw[:4] != STUDENT_MAGIC or raw[4] != STUDENT_VERSION:
            raise SnapshotError(f"{path}: not a student weights file")
        n = int.from_bytes(raw[5:9], "little")
        if len(raw) != 9 + 8 * n:
            raise SnapshotError(f"{path}: truncated student weights")
        s = cls(n, embedder=embedder)
        s.theta = np.frombuffer(raw[9:], dtype="<f8").astype(float)
        return s


def softmax(s: np.ndarray) -> np.ndarray:
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def record_losses(theta: np.ndarray, rec: PreparedRecord, lam: float) -> LossBreakdown:
    p = softmax(rec.features @ theta)
    ce = selection_loss_ce(p, rec.target)
    mse = rationale_loss(p @ rec.slot_embeddings, rec.teacher_embedding)
    ind = selection_loss_indicator(int(np.argmax(p)) + 1, rec.target)
    return LossBreakdown(ce, ind, mse, lam, total_loss(ce, mse, lam))


def objective(theta: np.ndarray, batch: Sequence[PreparedRecord], lam: float):
    """Mean total loss over `batch`, its gradient, and the per-record breakdowns."""
    grad = np.zeros_like(theta)
    parts = []
    for rec in batch:
        s = rec.features @ theta
        p = softmax(s)
        y = np.zeros(2)
        y[rec.target - 1] = 1.0
        m = p @ rec.slot_embeddings
        resid = m - rec.teacher_embedding
        # d total / d s_j = (p_j - y_j) + 2 lam p_j (m - r_T) . (e_j - m)
        ds = (p - y) + 2.0 * lam * p * ((rec.slot_embeddings - m) @ resid)
        grad += ds @ rec.features
        parts.append(record_losses(theta, rec, lam))
    n = len(batch)
    return sum(b.total for b in parts) / n, grad / n, parts


def mean_breakdown(parts: Sequence[LossBreakdown], lam: float) -> LossBreakdown:
    n = len(parts)
    ce = sum(b.select_ce for b in parts) / n
    mse = sum(b.rationale_mse for b in parts) / n
    return LossBreakdown(ce, sum(b.select_indicator for b in parts) / n, mse, lam, total_loss(ce, mse, lam))


@dataclass
class TrainResult:
    student: ReferenceStudent
    curve: list[LossBreakdown] = field(default_factory=list)
    prepared: list[PreparedRecord] = field(default_factory=list)

    def accuracy(self, reference: str = "teacher") -> float:
        hits = 0
        for rec in self.prepared:
            pred = int(np.argmax(softmax(rec.features @ self.student.theta))) + 1
            hits += pred == (rec.target if reference == "teacher" else rec.sampler_label)
        return hits / len(self.prepared)


def train_reference_student(labeled: Sequence[LabeledRecord], cfg: DistillConfig = DistillConfig(),
                            embedder: TextEmbedder | None = None, check_invariants: bool = True) -> TrainResult:
    """Full-batch gradient descent on the mean total loss.

    ``curve[e]`` is the mean breakdown before the update of epoch e.
    """
    if len(labeled) < 2:
        raise DegenerateDataset(f"need at least 2 labeled records, got {len(labeled)}")
    if len({item.teacher.selected for item in labeled}) < 2:
        raise DegenerateDataset("teacher picked the same slot for every record")
    student = ReferenceStudent(cfg.n_features, cfg.seed, embedder, cfg.init_scale)
    prepared = [student.prepare(item) for item in labeled]
    curve = []
    for _ in range(cfg.epochs):
        _, grad, parts = objective(student.theta, prepared, cfg.lam)
        if check_invariants:
            for b in parts:
                if abs(b.total - (b.select_ce + b.lam * b.rationale_mse)) > 1e-9:
                    raise FloatingPointError("total loss diverged from its decomposition")
        curve.append(mean_breakdown(parts, cfg.lam))
        student.update(grad, cfg.learning_rate)
    return TrainResult(student, curve, prepared)


def student_outputs(student: ReferenceStudent, records: Iterable[TrainingRecord]) -> list[dict]:
    out = []
    for rec in records:
        p, rationale = student.predict(rec)
        out.append({"id": rec.id, "selected": int(np.argmax(p)) + 1, "rationale": rationale,
                    "probs": [float(x) for x in p]})
    return out


def write_loss_curve(curve: Sequence[LossBreakdown], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("epoch,select_ce,select_error_rate,rationale_mse,lambda,total\n")
        for e, b in enumerate(curve):
            fh.write(f"{e},{b.select_ce!r},{b.select_indicator!r},{b.rationale_mse!r},{b.lam!r},{b.total!r}\n")
