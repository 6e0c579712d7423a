"""Host API for guest procedures, plus the builtin procedure registry.

Guests are deterministic Python callables registered by name; the function
position of an application must evaluate to a blob whose bytes name one.
A guest receives an InvocationContext and the handle of its resolved input
tree, and returns the handle of any object it created or was given.

The context enforces the sandbox: attaches are only legal for objects inside
the invocation's minimum repository, refs and thunks cannot be read at all,
and allocation is charged against the memory limit from the input's resource
blob. Thunks and encodes a guest creates are never evaluated until after it
returns.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    AccessViolationError,
    HandleTypeError,
    ResourceExceededError,
    UnknownProcedureError,
)
from .handle import Access, EncodeStyle, Handle, Kind, Laziness
from .semantics import (
    EvalContext,
    ResourceLimits,
    application_thunk,
    identification_thunk,
    selection_thunk,
    shallow_encode,
    strict_encode,
)
from .store import Blob, Repository, Tree

_U64_MASK = (1 << 64) - 1


def decode_uint(data: bytes) -> int:
    """Numeric blobs are unsigned little-endian of any length."""
    return int.from_bytes(data, "little")


def encode_u64(value: int) -> bytes:
    return (value & _U64_MASK).to_bytes(8, "little")


@dataclass(frozen=True)
class QueryInfo:
    """What a guest may learn about a handle it holds."""

    is_thunk: bool
    is_encode: bool
    kind: Optional[Kind]      # None for thunks: they cannot be inspected
    access: Optional[Access]
    size: Optional[int]


class InvocationContext:
    """One guest invocation's window onto the repository."""

    def __init__(self, repo: Repository, input_tree: Handle,
                 limits: ResourceLimits, min_repo: frozenset):
        self.repo = repo
        self.input = input_tree
        self.limits = limits
        self.min_repo = min_repo
        self.allocated = 0
        self.attached: set[Handle] = set()  # instrumentation for the sandbox tests
        self.attached_bytes = 0  # flushed to the counters once per invocation

    # -- reading -------------------------------------------------------------

    def _check_attach(self, h: Handle, kind: Kind) -> None:
        if h.encode != EncodeStyle.NONE or h.laziness != Laziness.VALUE:
            raise HandleTypeError("thunks cannot be attached")
        if h.access == Access.REF:
            raise AccessViolationError("refs expose type and size, not data")
        if h.kind != kind:
            raise HandleTypeError(f"expected a {kind.name.lower()} handle")
        if h not in self.min_repo:
            raise AccessViolationError("handle outside the minimum repository")

    def attach_blob(self, h: Handle) -> bytes:
        self._check_attach(h, Kind.BLOB)
        data = self.repo.get(h).data
        self.attached.add(h)
        self.attached_bytes += len(data)
        return data

    def attach_tree(self, h: Handle) -> tuple[Handle, ...]:
        self._check_attach(h, Kind.TREE)
        children = self.repo.get(h).children
        self.attached.add(h)
        self.attached_bytes += 32 * len(children)
        return children

    # -- creating ------------------------------------------------------------

    def _charge(self, nbytes: int) -> None:
        if self.allocated + nbytes > self.limits.memory_limit:
            raise ResourceExceededError(
                f"allocation of {nbytes} bytes exceeds the {self.limits.memory_limit}-byte limit"
            )
        self.allocated += nbytes

    def create_blob(self, data: bytes) -> Handle:
        self._charge(len(data))
        return self.repo.put(Blob(bytes(data)))

    def create_tree(self, children) -> Handle:
        children = tuple(children)
        self._charge(32 * len(children))
        return self.repo.put(Tree(children))

    # -- deferring -----------------------------------------------------------

    def make_application(self, def_tree: Handle) -> Handle:
        return application_thunk(self.repo, def_tree)

    def make_identification(self, h: Handle) -> Handle:
        return identification_thunk(self.repo, h)

    def make_selection(self, target: Handle, index: int) -> Handle:
        return selection_thunk(self.repo, target, index)

    def make_strict(self, thunk: Handle) -> Handle:
        return strict_encode(thunk)

    def make_shallow(self, thunk: Handle) -> Handle:
        return shallow_encode(thunk)

    # -- inspecting ----------------------------------------------------------

    def query(self, h: Handle) -> QueryInfo:
        if h.laziness != Laziness.VALUE:
            return QueryInfo(is_thunk=h.encode == EncodeStyle.NONE,
                             is_encode=h.encode != EncodeStyle.NONE,
                             kind=None, access=None, size=None)
        return QueryInfo(False, False, h.kind, h.access, h.size)

    def get_size(self, h: Handle) -> int:
        if h.laziness != Laziness.VALUE:
            raise HandleTypeError("thunks cannot be inspected")
        return h.size

    def is_blob(self, h: Handle) -> bool:
        return h.laziness == Laziness.VALUE and h.kind == Kind.BLOB

    def is_tree(self, h: Handle) -> bool:
        return h.laziness == Laziness.VALUE and h.kind == Kind.TREE

    def is_ref(self, h: Handle) -> bool:
        return h.laziness == Laziness.VALUE and h.access == Access.REF

    def is_thunk(self, h: Handle) -> bool:
        return h.laziness != Laziness.VALUE and h.encode == EncodeStyle.NONE

    def is_encode(self, h: Handle) -> bool:
        return h.encode != EncodeStyle.NONE


Procedure = Callable[[InvocationContext, Handle], Handle]


class ProcedureRegistry:
    """Immutable-after-startup name → procedure table."""

    def __init__(self):
        self._procs: dict[str, Procedure] = {}

    def register(self, name: str, fn: Procedure) -> None:
        if name in self._procs:
            raise ValueError(f"procedure {name!r} already registered")
        self._procs[name] = fn

    def contains(self, name: str) -> bool:
        return name in self._procs

    def names(self):
        return sorted(self._procs)

    def invoke(self, name: str, eval_ctx: EvalContext, input_tree: Handle,
               limits: ResourceLimits, min_repo: frozenset) -> Handle:
        fn = self._procs.get(name)
        if fn is None:
            raise UnknownProcedureError(name)
        repo = eval_ctx.repo
        for h in min_repo:
            # Run-to-completion re-assertion at the invocation boundary.
            if (h.laziness == Laziness.VALUE and h.access == Access.OBJECT
                    and not repo.contains(h)):
                if eval_ctx.counters is not None:
                    eval_ctx.counters.add("late_binding_violations")
                raise AssertionError(f"invoked with missing object {h.hex()}")
        ictx = InvocationContext(repo, input_tree, limits, min_repo)
        try:
            return fn(ictx, input_tree)
        finally:
            if eval_ctx.counters is not None and ictx.attached_bytes:
                eval_ctx.counters.add("bytes_attached", ictx.attached_bytes)


# --- builtins ----------------------------------------------------------------

def name_blob(repo: Repository, name: str) -> Handle:
    return repo.put(Blob(name.encode("utf-8")))


def _proc_add(ctx: InvocationContext, input_tree: Handle) -> Handle:
    _, _, a, b = ctx.attach_tree(input_tree)
    total = decode_uint(ctx.attach_blob(a)) + decode_uint(ctx.attach_blob(b))
    return ctx.create_blob(encode_u64(total))


def _proc_increment(ctx: InvocationContext, input_tree: Handle) -> Handle:
    _, _, x = ctx.attach_tree(input_tree)
    return ctx.create_blob(encode_u64(decode_uint(ctx.attach_blob(x)) + 1))


def _proc_concat(ctx: InvocationContext, input_tree: Handle) -> Handle:
    children = ctx.attach_tree(input_tree)
    return ctx.create_blob(b"".join(ctx.attach_blob(c) for c in children[2:]))


def _proc_count_string(ctx: InvocationContext, input_tree: Handle) -> Handle:
    _, _, shard, needle = ctx.attach_tree(input_tree)
    needle_bytes = ctx.attach_blob(needle)
    if not needle_bytes:
        return ctx.create_blob(encode_u64(0))
    # bytes.count is non-overlapping, matching the counting contract.
    return ctx.create_blob(encode_u64(ctx.attach_blob(shard).count(needle_bytes)))


def _proc_merge_counts(ctx: InvocationContext, input_tree: Handle) -> Handle:
    _, _, a, b = ctx.attach_tree(input_tree)
    total = decode_uint(ctx.attach_blob(a)) + decode_uint(ctx.attach_blob(b))
    return ctx.create_blob(encode_u64(total))


def _proc_if(ctx: InvocationContext, input_tree: Handle) -> Handle:
    _, _, pred, a, b = ctx.attach_tree(input_tree)
    return a if decode_uint(ctx.attach_blob(pred)) else b


def _proc_fib(ctx: InvocationContext, input_tree: Handle) -> Handle:
    rlimit, fib_fn, add_fn, x = ctx.attach_tree(input_tree)
    n = decode_uint(ctx.attach_blob(x))
    if n <= 1:
        return ctx.create_blob(encode_u64(n))
    x1 = ctx.create_blob(encode_u64(n - 1))
    e1 = ctx.make_strict(ctx.make_application(
        ctx.create_tree((rlimit, fib_fn, add_fn, x1))))
    x2 = ctx.create_blob(encode_u64(n - 2))
    e2 = ctx.make_strict(ctx.make_application(
        ctx.create_tree((rlimit, fib_fn, add_fn, x2))))
    t_sum = ctx.create_tree((rlimit, add_fn, e1, e2))
    return ctx.make_application(t_sum)


# B+-tree node info blob: tag byte (I=internal, L=leaf) followed by a packed
# key array: u32 count, then u16 length + bytes per key.

def pack_node_info(tag: bytes, keys: list[bytes]) -> bytes:
    parts = [tag, struct.pack("<I", len(keys))]
    for k in keys:
        parts.append(struct.pack("<H", len(k)))
        parts.append(k)
    return b"".join(parts)


def unpack_node_info(data: bytes) -> tuple[bytes, list[bytes]]:
    tag = data[:1]
    (count,) = struct.unpack_from("<I", data, 1)
    keys = []
    off = 5
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        keys.append(data[off : off + n])
        off += n
    return tag, keys


def _proc_bptree_lookup_step(ctx: InvocationContext, input_tree: Handle) -> Handle:
    rlimit, fn, key_h, info_h, node_h = ctx.attach_tree(input_tree)
    key = ctx.attach_blob(key_h)
    tag, keys = unpack_node_info(ctx.attach_blob(info_h))
    if tag == b"I":
        child_index = 1 + bisect.bisect_right(keys, key)
        child = ctx.make_selection(node_h, child_index)
        info = ctx.make_strict(ctx.make_selection(child, 0))
        ref = ctx.make_shallow(child)
        next_input = ctx.create_tree((rlimit, fn, key_h, info, ref))
        return ctx.make_application(next_input)
    if tag == b"L":
        j = bisect.bisect_left(keys, key)
        if j < len(keys) and keys[j] == key:
            return ctx.make_selection(node_h, 1 + j)
        return ctx.create_blob(b"")  # lookup miss
    raise ValueError(f"unknown node tag {tag!r}")


def default_registry() -> ProcedureRegistry:
    reg = ProcedureRegistry()
    reg.register("add", _proc_add)
    reg.register("increment", _proc_increment)
    reg.register("concat", _proc_concat)
    reg.register("count_string", _proc_count_string)
    reg.register("merge_counts", _proc_merge_counts)
    reg.register("if", _proc_if)
    reg.register("fib", _proc_fib)
    reg.register("bptree_lookup_step", _proc_bptree_lookup_step)
    return reg
