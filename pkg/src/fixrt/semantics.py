"""Evaluation rules: forcing thunks, strict/shallow evaluation, input resolution.

A thunk's definition is a tree stored under the thunk's own content bytes:

    Application     [rlimit-blob, function, args...]
    Identification  [target]
    Selection       [target, index-blob (u64 little-endian)]

Encodes are meta retags of thunks; evaluating one evaluates the thunk in the
requested style. All evaluation flows through an EvalContext, whose hook
methods let the runtime turn embedded encodes into separate jobs; the default
context evaluates everything inline and is what the oracle comparisons and
simple library callers use.

A missing object surfaces as NotFoundError. That is a fetch trigger for the
runtime, never an error a guest procedure can observe: every object a guest
may attach is verified present before its invocation starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import (
    BoundsError,
    EvaluationFailure,
    HandleTypeError,
    NotFoundError,
    UnknownProcedureError,
    UnsupportedSelectionError,
)
from .handle import (
    Access,
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    as_object,
    memo_key,
    retag,
)
from .store import Blob, Repository, Tree

DEFAULT_MEMORY_LIMIT = 1 << 26  # 64 MiB unless a program says otherwise


@dataclass(frozen=True)
class ResourceLimits:
    """First element of every application definition, as a 16-byte blob."""

    memory_limit: int = DEFAULT_MEMORY_LIMIT
    output_size_hint: int = 0  # 0 = no hint

    def to_blob(self) -> bytes:
        return self.memory_limit.to_bytes(8, "little") + self.output_size_hint.to_bytes(8, "little")

    @staticmethod
    def from_blob(data: bytes) -> "ResourceLimits":
        if len(data) != 16:
            raise HandleTypeError(f"resource-limit blob must be 16 bytes, got {len(data)}")
        return ResourceLimits(
            int.from_bytes(data[:8], "little"),
            int.from_bytes(data[8:16], "little"),
        )


# --- thunk constructors ----------------------------------------------------

def application_thunk(repo: Repository, def_tree: Handle) -> Handle:
    if def_tree.kind != Kind.TREE or def_tree.laziness != Laziness.VALUE:
        raise HandleTypeError("application definitions are trees")
    base = as_object(def_tree)
    return retag(base, laziness=Laziness.APPLICATION)


def identification_thunk(repo: Repository, target: Handle) -> Handle:
    def_tree = repo.put(Tree((target,)))
    return retag(def_tree, laziness=Laziness.IDENTIFICATION)


def selection_thunk(repo: Repository, target: Handle, index: int) -> Handle:
    if index < 0:
        raise BoundsError(f"negative selection index {index}")
    idx = repo.put(Blob(index.to_bytes(8, "little")))
    def_tree = repo.put(Tree((target, idx)))
    return retag(def_tree, laziness=Laziness.SELECTION)


def strict_encode(thunk: Handle) -> Handle:
    return retag(thunk, encode=EncodeStyle.STRICT)


def shallow_encode(thunk: Handle) -> Handle:
    return retag(thunk, encode=EncodeStyle.SHALLOW)


def strip_encode(h: Handle) -> Handle:
    if h.encode == EncodeStyle.NONE:
        return h
    return retag(h, encode=EncodeStyle.NONE)


# --- evaluation context -----------------------------------------------------

class EvalContext:
    """Repository + procedure registry + counters, with runtime hook points.

    `registry` must provide invoke(name, ctx, input_tree, limits, min_repo)
    and `contains(name)`. `counters` may be None (the oracle path) or any
    object with the counter attributes the runtime defines.
    """

    def __init__(self, repo: Repository, registry, counters=None,
                 force_cache: Optional[dict] = None):
        self.repo = repo
        self.registry = registry
        self.counters = counters
        # One-step application results, keyed by memo key. Application
        # forcing is pure, so this is safe to share and to keep across job
        # restarts; it is what makes a restarted job invoke no guest twice.
        # Selection results are presence-dependent and are never cached.
        self.force_cache = {} if force_cache is None else force_cache

    def request_encodes(self, pairs: Sequence[tuple[Handle, EncodeStyle]]) -> None:
        """Called with every encode found in an input tree before substitution.

        The default context evaluates lazily in eval_encode; the runtime's
        context turns unmemoized pairs into jobs instead.
        """

    def eval_encode(self, thunk: Handle, style: EncodeStyle) -> Handle:
        if style == EncodeStyle.STRICT:
            return eval_strict(self, thunk)
        return eval_shallow(self, thunk)

    def count(self, name: str, delta: int = 1) -> None:
        if self.counters is not None:
            self.counters.add(name, delta)


# --- core rules --------------------------------------------------------------

def _definition(ctx: EvalContext, thunk: Handle) -> Tree:
    obj = ctx.repo.get(as_object(thunk))
    if not isinstance(obj, Tree):
        raise HandleTypeError("thunk definition is not a tree")
    return obj


def force_until_value(ctx: EvalContext, h: Handle) -> Handle:
    """Trampoline a thunk (or encode) until the result is a value handle."""
    repo = ctx.repo
    while h.laziness != Laziness.VALUE:
        if h.encode == EncodeStyle.STRICT:
            h = ctx.eval_encode(strip_encode(h), EncodeStyle.STRICT)
            continue
        if h.encode == EncodeStyle.SHALLOW:
            h = ctx.eval_encode(strip_encode(h), EncodeStyle.SHALLOW)
            continue
        # Only the shallow memo is a safe shortcut here: it records the raw
        # trampolined value (as a Ref). The strict memo holds a deep
        # normalization, which would change shallow results downstream.
        hit = repo.memo_get(h, EncodeStyle.SHALLOW)
        if hit is not None:
            h = hit
            continue
        h = force(ctx, h)
    return h


def force(ctx: EvalContext, thunk: Handle) -> Handle:
    """One forcing step. The result may itself be a thunk; callers trampoline."""
    if thunk.laziness == Laziness.VALUE:
        raise HandleTypeError("cannot force a value")
    defn = _definition(ctx, thunk)

    if thunk.laziness == Laziness.IDENTIFICATION:
        return defn[0]

    if thunk.laziness == Laziness.SELECTION:
        target, idx_handle = defn[0], defn[1]
        idx_obj = ctx.repo.get(idx_handle)
        if not isinstance(idx_obj, Blob) or len(idx_obj.data) != 8:
            raise EvaluationFailure(thunk, "selection index must be an 8-byte blob")
        index = int.from_bytes(idx_obj.data, "little")
        target = force_until_value(ctx, target)
        if target.kind != Kind.TREE:
            raise UnsupportedSelectionError(
                "selection over a blob target is not supported"
            )
        tree = ctx.repo.get(target)
        if index >= len(tree):
            raise BoundsError(f"selection index {index} out of range for size {len(tree)}")
        child = tree[index]
        if child.laziness != Laziness.VALUE:
            return child
        if ctx.repo.contains(child):
            return as_object(child)
        return retag(child, access=Access.REF)

    # Application
    cache_key = memo_key(thunk)
    cached = ctx.force_cache.get(cache_key)
    if cached is not None:
        return cached
    resolved = resolve_input(ctx, as_object(thunk))
    rtree = ctx.repo.get(resolved)
    if len(rtree) < 2:
        raise EvaluationFailure(thunk, "application definition needs [rlimit, function, ...]")

    rlimit_h = rtree[0]
    if rlimit_h.kind != Kind.BLOB or rlimit_h.laziness != Laziness.VALUE:
        raise EvaluationFailure(thunk, "resource limits must be a blob in position 0")
    try:
        limits = ResourceLimits.from_blob(ctx.repo.get(rlimit_h).data)
    except HandleTypeError as e:
        raise EvaluationFailure(thunk, str(e)) from None

    fn_h = rtree[1]
    if fn_h.laziness != Laziness.VALUE or fn_h.kind != Kind.BLOB:
        fn_h = eval_strict(ctx, fn_h)
    if fn_h.kind != Kind.BLOB:
        raise EvaluationFailure(thunk, "function position did not evaluate to a blob")
    if not ctx.repo.contains(fn_h):
        raise NotFoundError(fn_h)
    name_bytes = ctx.repo.get(fn_h).data
    try:
        name = name_bytes.decode("utf-8")
    except UnicodeDecodeError:
        raise EvaluationFailure(thunk, "function name is not UTF-8") from None
    if not ctx.registry.contains(name):
        raise UnknownProcedureError(name)

    min_repo = minimum_repository(ctx.repo, resolved)
    missing = [
        h for h in min_repo
        if h.laziness == Laziness.VALUE and h.access == Access.OBJECT
        and not ctx.repo.contains(h)
    ]
    if missing:
        # Run-to-completion: the invocation must not begin until its whole
        # minimum repository is local.
        raise NotFoundError(missing)

    ctx.count("guest_invocations")
    try:
        result = ctx.registry.invoke(name, ctx, resolved, limits, min_repo)
    except NotFoundError:
        raise AssertionError(
            "guest observed a missing object despite the minimum-repository check"
        )
    except EvaluationFailure:
        raise
    except Exception as e:
        raise EvaluationFailure(thunk, e) from e
    ctx.force_cache[cache_key] = result
    return result


def resolve_input(ctx: EvalContext, tree_h: Handle) -> Handle:
    """Substitute every encode in the tree (recursively) with its result.

    Strict encodes become fully evaluated objects, shallow encodes become
    refs; plain thunks, refs, and blobs pass through untouched. The returned
    tree defines the invocation's minimum repository.
    """
    if tree_h.kind != Kind.TREE:
        raise HandleTypeError("resolve_input needs a tree")
    pairs: list[tuple[Handle, EncodeStyle]] = []
    _scan_encodes(ctx.repo, tree_h, pairs)
    if pairs:
        ctx.request_encodes(pairs)
    return _substitute(ctx, tree_h)


def _scan_encodes(repo: Repository, tree_h: Handle, out: list) -> None:
    for child in repo.get(as_object(tree_h)).children:
        if child.encode != EncodeStyle.NONE:
            out.append((strip_encode(child), EncodeStyle(child.encode)))
        elif (child.kind == Kind.TREE and child.laziness == Laziness.VALUE
              and child.access == Access.OBJECT):
            _scan_encodes(repo, child, out)


def _substitute(ctx: EvalContext, tree_h: Handle) -> Handle:
    obj = ctx.repo.get(as_object(tree_h))
    changed = False
    out = []
    for child in obj.children:
        if child.encode != EncodeStyle.NONE:
            new = ctx.eval_encode(strip_encode(child), EncodeStyle(child.encode))
        elif (child.kind == Kind.TREE and child.laziness == Laziness.VALUE
              and child.access == Access.OBJECT):
            new = _substitute(ctx, child)
        else:
            new = child
        changed = changed or new != child
        out.append(new)
    if not changed:
        return as_object(tree_h)
    return ctx.repo.put(Tree(tuple(out)))


def minimum_repository(repo: Repository, root: Handle) -> frozenset[Handle]:
    """Handles reachable through Object edges; Refs and thunks are leaves."""
    seen: set[Handle] = set()
    stack = [root]
    while stack:
        h = stack.pop()
        if h in seen:
            continue
        seen.add(h)
        if (h.kind == Kind.TREE and h.laziness == Laziness.VALUE
                and h.access == Access.OBJECT):
            stack.extend(repo.get(h).children)
    return frozenset(seen)


def eval_shallow(ctx: EvalContext, thunk: Handle) -> Handle:
    """Force until the result is a value; deliver it as a Ref; memoize."""
    if thunk.laziness == Laziness.VALUE:
        raise HandleTypeError("eval_shallow needs a thunk or encode")
    thunk = strip_encode(thunk)
    hit = ctx.repo.memo_get(thunk, EncodeStyle.SHALLOW)
    if hit is not None:
        return hit
    result = retag(force_until_value(ctx, thunk), access=Access.REF)
    ctx.repo.memo_put(thunk, EncodeStyle.SHALLOW, result)
    return result


def eval_strict(ctx: EvalContext, h: Handle) -> Handle:
    """Fully evaluate: the result reaches no thunk, encode, or ref."""
    if h.laziness == Laziness.VALUE:
        if h.kind == Kind.BLOB:
            if not ctx.repo.contains(h):
                raise NotFoundError(h)
            return as_object(h)
        obj = ctx.repo.get(h)
        changed = False
        out = []
        for child in obj.children:
            new = eval_strict(ctx, child)
            changed = changed or new != child
            out.append(new)
        if not changed:
            return as_object(h)
        return ctx.repo.put(Tree(tuple(out)))

    thunk = strip_encode(h)
    hit = ctx.repo.memo_get(thunk, EncodeStyle.STRICT)
    if hit is not None:
        return hit
    value = force_until_value(ctx, thunk)
    result = eval_strict(ctx, value)
    ctx.repo.memo_put(thunk, EncodeStyle.STRICT, result)
    return result


def assert_normal(repo: Repository, h: Handle) -> None:
    """Test helper: verify strict normality of an evaluation result."""
    stack = [h]
    seen = set()
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        if cur.laziness != Laziness.VALUE or cur.encode != EncodeStyle.NONE:
            raise AssertionError(f"non-value handle reachable: {cur!r}")
        if cur.access != Access.OBJECT:
            raise AssertionError(f"ref reachable in strict result: {cur!r}")
        if cur.kind == Kind.TREE:
            stack.extend(repo.get(cur).children)


# --- reference oracle ---------------------------------------------------------
#
# A deliberately naive evaluator used only for equivalence testing: plain
# recursion, no memo table, no counters. It must agree with eval_strict on
# every input it can evaluate.

def oracle_eval(repo: Repository, registry, h: Handle) -> Handle:
    return _oracle_strict(repo, registry, h)


def _oracle_force_once(repo: Repository, registry, thunk: Handle) -> Handle:
    defn = repo.get(as_object(thunk))
    if thunk.laziness == Laziness.IDENTIFICATION:
        return defn[0]
    if thunk.laziness == Laziness.SELECTION:
        index = int.from_bytes(repo.get(defn[1]).data, "little")
        target = _oracle_until_value(repo, registry, defn[0])
        if target.kind != Kind.TREE:
            raise UnsupportedSelectionError("selection over a blob target")
        tree = repo.get(target)
        if index >= len(tree):
            raise BoundsError(f"selection index {index} out of range")
        child = tree[index]
        if child.laziness != Laziness.VALUE:
            return child
        return as_object(child) if repo.contains(child) else retag(child, access=Access.REF)

    # Application: substitute encodes recursively, then invoke.
    def substitute(tree_h: Handle) -> Handle:
        children = []
        for c in repo.get(as_object(tree_h)).children:
            if c.encode == EncodeStyle.STRICT:
                children.append(_oracle_strict(repo, registry, strip_encode(c)))
            elif c.encode == EncodeStyle.SHALLOW:
                value = _oracle_until_value(repo, registry, strip_encode(c))
                children.append(retag(value, access=Access.REF))
            elif (c.kind == Kind.TREE and c.laziness == Laziness.VALUE
                  and c.access == Access.OBJECT):
                children.append(substitute(c))
            else:
                children.append(c)
        return repo.put(Tree(tuple(children)))

    resolved = substitute(as_object(thunk))
    rtree = repo.get(resolved)
    limits = ResourceLimits.from_blob(repo.get(rtree[0]).data)
    fn_h = rtree[1]
    if fn_h.laziness != Laziness.VALUE or fn_h.kind != Kind.BLOB:
        fn_h = _oracle_strict(repo, registry, fn_h)
    name = repo.get(fn_h).data.decode("utf-8")
    if not registry.contains(name):
        raise UnknownProcedureError(name)
    ctx = EvalContext(repo, registry, counters=None)
    try:
        return registry.invoke(name, ctx, resolved, limits,
                               minimum_repository(repo, resolved))
    except EvaluationFailure:
        raise
    except Exception as e:
        raise EvaluationFailure(thunk, e) from e


def _oracle_until_value(repo, registry, h: Handle) -> Handle:
    while h.laziness != Laziness.VALUE:
        if h.encode == EncodeStyle.STRICT:
            h = _oracle_strict(repo, registry, strip_encode(h))
        elif h.encode == EncodeStyle.SHALLOW:
            h = retag(_oracle_until_value(repo, registry, strip_encode(h)),
                      access=Access.REF)
        else:
            h = _oracle_force_once(repo, registry, h)
    return h


def _oracle_strict(repo, registry, h: Handle) -> Handle:
    h = _oracle_until_value(repo, registry, h)
    if h.kind == Kind.BLOB:
        return as_object(h)
    children = tuple(
        _oracle_strict(repo, registry, c) for c in repo.get(h).children
    )
    return repo.put(Tree(children))
