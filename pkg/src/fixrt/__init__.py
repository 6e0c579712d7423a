"""Content-addressed lazy computation graphs with a locality-aware runtime."""

from .errors import (
    AccessViolationError,
    BoundsError,
    CorruptionError,
    DeterminismViolationError,
    EvaluationFailure,
    FixError,
    HandleTypeError,
    JobTimeout,
    MalformedHandleError,
    NotFoundError,
    ProtocolError,
    ResourceExceededError,
    SizeOverflowError,
    UnknownProcedureError,
    UnsupportedSelectionError,
)
from .handle import (
    Access,
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    blob_handle,
    inspect,
    retag,
    tree_handle,
)
from .procapi import InvocationContext, ProcedureRegistry, default_registry
from .runtime import Counters, JobState, Runtime
from .semantics import (
    EvalContext,
    ResourceLimits,
    application_thunk,
    eval_shallow,
    eval_strict,
    force,
    identification_thunk,
    minimum_repository,
    oracle_eval,
    resolve_input,
    selection_thunk,
    shallow_encode,
    strict_encode,
)
from .store import Blob, FixObject, Repository, Tree

__version__ = "0.1.0"

__all__ = [
    "Access", "AccessViolationError", "Blob", "BoundsError", "CorruptionError",
    "Counters", "DeterminismViolationError", "EncodeStyle", "EvalContext",
    "EvaluationFailure", "FixError", "FixObject", "Handle", "HandleTypeError",
    "InvocationContext", "JobState", "JobTimeout", "Kind", "Laziness",
    "MalformedHandleError", "NotFoundError", "ProcedureRegistry",
    "ProtocolError", "Repository", "ResourceExceededError", "ResourceLimits",
    "Runtime", "SizeOverflowError", "Tree", "UnknownProcedureError",
    "UnsupportedSelectionError", "application_thunk", "blob_handle",
    "default_registry", "eval_shallow", "eval_strict", "force",
    "identification_thunk", "inspect", "minimum_repository", "oracle_eval",
    "resolve_input", "retag", "selection_thunk", "shallow_encode",
    "strict_encode", "tree_handle",
]
