"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all compose-verify errors."""


class ZeroRow(EngineError):
    """A vector that must be normalized has (near-)zero norm."""


class DimMismatch(EngineError):
    """Embedding dimensions disagree where they must match."""


class BadMagic(EngineError):
    """A binary file does not start with the expected magic bytes."""


class TruncatedFile(EngineError):
    """A binary file ended before its declared payload."""


class ParseError(EngineError):
    """A text input file failed to parse; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(EngineError):
    """An id appears more than once where uniqueness is required."""


class EmptyIndex(EngineError):
    """Attempted to build a search index from no keys."""


class EmptyAfterTokenization(EngineError):
    """Tokenizing a text produced no tokens."""


class BadPatchSize(EngineError):
    """Patch side does not divide the padded map side."""


class ShapeMismatch(EngineError):
    """A parameter tensor does not have its declared shape."""


class NonLearnableKind(EngineError):
    """Training was requested for a parameter-free verifier."""


class DataEmpty(EngineError):
    """A training or mixing operation received no data."""


class UnsupportedPattern(EngineError):
    """A perturbation rule does not apply to the given sentence."""


class LexiconExhausted(EngineError):
    """More generated items were requested than the lexicons can supply."""


class MissingEmbedding(EngineError):
    """A rerank candidate has no stored token embeddings."""


class NoJudgedQueries(EngineError):
    """A metric was requested for a run with no judged queries."""


class Cancellation(EngineError):
    """Vector superposition summed to (near-)zero."""


class UnknownConfigKey(EngineError):
    """A run configuration contained a key the engine does not know."""
