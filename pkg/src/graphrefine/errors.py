"""Exception types shared across the library.

The CLI maps these onto exit codes: usage problems exit 1, data and
format problems exit 2, numerical failures exit 3.
"""


class GraphRefineError(Exception):
    """Base class for all library errors."""


class ConfigError(GraphRefineError):
    """Invalid configuration file or flag combination (usage error)."""


class LoadError(GraphRefineError):
    """A dataset file is missing or unreadable."""


class FormatError(GraphRefineError):
    """A dataset file exists but its contents violate the format."""


class PreconditionError(GraphRefineError):
    """An operation was called with inputs outside its contract."""


class ConsistencyError(GraphRefineError):
    """Internal invariant violated while assembling a result."""


class UndefinedResultError(GraphRefineError):
    """The requested quantity is undefined for this input (e.g. a
    ratio with an empty denominator)."""


class NumericalError(GraphRefineError):
    """A numerical routine failed (factorization breakdown, divergence)."""


class TrainingDivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


def annotate(exc: BaseException, note: str) -> None:
    """Attach a context note to an exception before re-raising it.

    Uses add_note on Python 3.11+; on 3.10 the note is stored on
    __notes__ directly (present for inspection, not printed by the
    stock traceback formatter).
    """
    if hasattr(exc, "add_note"):
        exc.add_note(note)
        return
    notes = getattr(exc, "__notes__", None)
    if notes is None:
        notes = []
        exc.__notes__ = notes
    notes.append(note)
