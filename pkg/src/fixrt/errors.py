"""Error taxonomy shared across the package."""

from __future__ import annotations


class FixError(Exception):
    """Base class for every error this package raises deliberately."""


class MalformedHandleError(FixError, ValueError):
    """A 32-byte handle whose meta bits violate the declared layout."""


class SizeOverflowError(FixError, ValueError):
    """Blob length or tree child count does not fit the 48-bit size field."""


class HandleTypeError(FixError, TypeError):
    """An operation applied to a handle of the wrong kind or meta state."""


class NotFoundError(FixError, KeyError):
    """A handle's data is not present locally.

    Inside the runtime this is a fetch trigger, not a failure; it only
    surfaces to users when no peer can supply the object either.
    """

    def __init__(self, handles):
        if not isinstance(handles, (list, tuple, set, frozenset)):
            handles = [handles]
        self.handles = tuple(handles)
        super().__init__(", ".join(h.hex() for h in self.handles))

    def __str__(self):
        plural = "s" if len(self.handles) != 1 else ""
        return f"object{plural} not present: " + ", ".join(h.hex() for h in self.handles)


class DeterminismViolationError(FixError):
    """A (thunk, style) pair was recorded with two different results."""


class CorruptionError(FixError):
    """A persisted or received object fails hash re-validation."""


class AccessViolationError(FixError):
    """A guest touched data outside its minimum repository, or a Ref's data."""


class ResourceExceededError(FixError):
    """A guest allocated beyond the memory limit in its resource blob."""


class UnknownProcedureError(FixError):
    """The function position names no registered procedure."""


class BoundsError(FixError, IndexError):
    """Selection index at or beyond the target tree's size."""


class UnsupportedSelectionError(FixError):
    """Selection over a Blob target (byte subranges are not implemented)."""


class EvaluationFailure(FixError):
    """A guest procedure failed; carries the handle of the failing thunk."""

    def __init__(self, thunk, cause):
        self.thunk = thunk
        self.cause = cause
        super().__init__(f"evaluation of {thunk.hex()} failed: {cause}")


class ProtocolError(FixError):
    """A malformed, mis-versioned, or hash-mismatched wire message."""


class JobTimeout(FixError, TimeoutError):
    """await_result exceeded its deadline."""
