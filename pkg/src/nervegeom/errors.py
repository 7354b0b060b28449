"""Exception hierarchy shared by the library and the command line."""


class NerveGeomError(Exception):
    """Base class for all library errors."""

    exit_code = 4
    kind = "internal"


class ParseError(NerveGeomError):
    """Input could not be parsed (malformed JSON/CSV or schema mismatch)."""

    exit_code = 2
    kind = "parse"


class InputError(NerveGeomError):
    """Input parsed but violates a precondition."""

    exit_code = 3
    kind = "validation"


class InvariantError(NerveGeomError):
    """An internal invariant was violated; indicates a bug or numerical failure."""

    exit_code = 4
    kind = "invariant"


class EmbeddingError(InputError):
    """Edge lengths do not describe a Euclidean simplex."""
