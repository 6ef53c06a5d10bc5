"""Exception types shared across the package.

Every error raised on bad user input derives from FacetrankError so the CLI
can map them onto exit codes without enumerating modules.
"""


class FacetrankError(Exception):
    """Base class for all package errors."""


class FormatError(FacetrankError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class MissingComponent(FacetrankError):
    """Query lacks a required heading component."""


class EmptyCorpus(FacetrankError):
    """An operation that needs at least one document/article got none."""


class DuplicateDocument(FacetrankError):
    """The same identifier appeared twice in one input stream."""


class UnknownDocument(FacetrankError):
    """A document id was requested that the index has never seen."""


class EmbeddingError(FacetrankError):
    """Embedding file is malformed or dimensionally inconsistent."""


class ShapeError(FacetrankError):
    """Tensor operands have incompatible shapes."""


class VariantError(FacetrankError):
    """A scoring path was invoked that the model variant does not support."""


class MissingContext(FacetrankError):
    """A context-aware variant was scored without its context features."""


class CheckpointError(FacetrankError):
    """Checkpoint file is malformed or inconsistent with its config."""
