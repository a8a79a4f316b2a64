"""Exception hierarchy shared by every stage."""


class PipelineError(Exception):
    """Base class for all errors raised by rxdistill."""


class ValidationError(PipelineError):
    """Bad input or configuration. CLI exit status 1."""


class StageError(PipelineError):
    """A stage failed while running. CLI exit status 2."""


# kg_store
class MissingFile(ValidationError):
    pass


class MalformedLine(ValidationError):
    def __init__(self, line_no: int, line: str = ""):
        super().__init__(f"malformed triple at line {line_no}: {line!r}")
        self.line_no = line_no


class UnknownEntity(ValidationError):
    def __init__(self, entity):
        super().__init__(f"unknown entity: {entity!r}")
        self.entity = entity


class SnapshotError(ValidationError):
    pass


# kg_embed
class ZeroVector(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyGraph(ValidationError):
    pass


# pair_sampler
class NotADisease(ValidationError):
    pass


class InsufficientCandidates(StageError):
    def __init__(self, size: int):
        super().__init__(f"candidate pool has {size} member(s), need at least 2")
        self.size = size


# corpus_ingest
class XmlMalformed(ValidationError):
    pass


class JsonMalformed(ValidationError):
    pass


class Rejected(PipelineError):
    """A document was dropped by a cleaning rule; `reason` is EmptyTitle or EmptyAbstract."""

    def __init__(self, reason: str, doc_id: str = ""):
        super().__init__(f"{doc_id or 'document'} rejected: {reason}")
        self.reason = reason
        self.doc_id = doc_id


class EmptyDrugList(ValidationError):
    pass


# search_index
class DuplicateChunkRef(ValidationError):
    pass


class UnknownChunk(ValidationError):
    pass


# reranker
class EmptyName(ValidationError):
    pass


class EmbedderFailure(StageError):
    def __init__(self, chunk_ref, cause: Exception | None = None):
        super().__init__(f"embedding failed for chunk {chunk_ref!r}: {cause}")
        self.chunk_ref = chunk_ref


class CacheCorrupt(PipelineError):
    pass


# dataset_builder
class UnboundPlaceholder(ValidationError):
    pass


class MalformedTemplate(ValidationError):
    pass


class MissingBackgroundKey(ValidationError):
    pass


class UnreadableFile(ValidationError):
    pass


# distill_harness
class UnparseableReply(PipelineError):
    def __init__(self, raw: str):
        super().__init__(f"cannot parse teacher reply: {raw[:80]!r}")
        self.raw = raw


class TeacherUnavailable(StageError):
    pass


class DegenerateDataset(ValidationError):
    pass


# eval_metrics
class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class IdMismatch(ValidationError):
    pass


# cli_orchestrator
class ConfigInvalid(ValidationError):
    def __init__(self, path: str, key: str, why: str = "unknown key"):
        super().__init__(f"{path}: {key}: {why}")
        self.path = path
        self.key = key


class MissingInput(StageError):
    def __init__(self, stage: str, path):
        super().__init__(f"stage {stage!r} is missing input {path}")
        self.stage = stage
        self.path = path


class MissingArtifact(PipelineError):
    def __init__(self, path):
        super().__init__(f"artifact missing: {path}")
        self.path = path
