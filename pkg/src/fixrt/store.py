"""Content-addressed repository: object bytes plus memoized evaluation results.

Objects are keyed by their object-form handle; literal blobs are never stored
(the handle itself reconstructs them). The results table maps (thunk, style)
to a result handle with first-write-wins semantics; a second write with a
different result signals a non-deterministic guest and is rejected.

On-disk layout under save()/load():

    objects/<64-hex object handle>    one file per non-literal object
    results.idx                       lines of "<thunk-hex> <style> <result-hex>"
"""

from __future__ import annotations

import os
import tempfile
import threading
from typing import Iterator, Optional, Union

from .errors import (
    CorruptionError,
    DeterminismViolationError,
    HandleTypeError,
    NotFoundError,
)
from .handle import (
    Access,
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    blob_handle,
    memo_key,
    storage_key,
    tree_handle,
)


class Blob:
    """A contiguous byte sequence."""

    __slots__ = ("data",)

    def __init__(self, data: bytes):
        self.data = data

    def __len__(self):
        return len(self.data)

    def __eq__(self, other):
        return isinstance(other, Blob) and self.data == other.data

    def __hash__(self):
        return hash((Blob, self.data))

    def __repr__(self):
        return f"Blob({self.data[:16]!r}{'…' if len(self.data) > 16 else ''})"


class Tree:
    """An ordered sequence of handles."""

    __slots__ = ("children",)

    def __init__(self, children: tuple[Handle, ...]):
        self.children = children

    def __len__(self):
        return len(self.children)

    def __getitem__(self, i) -> Handle:
        return self.children[i]

    def __eq__(self, other):
        return isinstance(other, Tree) and self.children == other.children

    def __hash__(self):
        return hash((Tree, self.children))

    def __repr__(self):
        return f"Tree({len(self.children)} children)"


FixObject = Union[Blob, Tree]


def object_handle(obj: FixObject) -> Handle:
    if isinstance(obj, Blob):
        return blob_handle(obj.data)
    return tree_handle(obj.children)


def serialize(obj: FixObject) -> bytes:
    """Canonical bytes: raw payload for blobs, concatenated handles for trees."""
    if isinstance(obj, Blob):
        return obj.data
    return b"".join(c.raw for c in obj.children)


def deserialize(kind: Kind, data: bytes) -> FixObject:
    if kind == Kind.BLOB:
        return Blob(bytes(data))
    if len(data) % 32:
        raise CorruptionError(f"tree payload of {len(data)} bytes is not a handle multiple")
    return Tree(tuple(Handle.from_bytes(data[i : i + 32]) for i in range(0, len(data), 32)))


_STYLE_NAMES = {EncodeStyle.STRICT: "strict", EncodeStyle.SHALLOW: "shallow"}
_STYLE_BY_NAME = {v: k for k, v in _STYLE_NAMES.items()}


class Repository:
    """Thread-safe content-addressed store. put/memo_put are atomic."""

    def __init__(self):
        self._objects: dict[bytes, FixObject] = {}
        self._results: dict[tuple[bytes, EncodeStyle], Handle] = {}
        self._lock = threading.Lock()

    def put(self, obj: FixObject) -> Handle:
        """Store under the canonical handle; idempotent; literals are elided."""
        h = object_handle(obj)
        if h.literal:
            return h
        key = h.raw  # object_handle yields object form already
        with self._lock:
            self._objects.setdefault(key, obj)
        return h

    def get(self, h: Handle) -> FixObject:
        # A thunk's referent is its definition tree, stored under the shared
        # content bytes; storage_key normalizes the meta away.
        if h.literal:
            return Blob(h.literal_bytes())
        with self._lock:
            obj = self._objects.get(storage_key(h))
        if obj is None:
            raise NotFoundError(h)
        return obj

    def contains(self, h: Handle) -> bool:
        if h.literal:
            return True
        with self._lock:
            return storage_key(h) in self._objects

    def contains_key(self, key: bytes) -> bool:
        with self._lock:
            return key in self._objects

    def memo_put(self, thunk: Handle, style: EncodeStyle, result: Handle) -> None:
        if style not in (EncodeStyle.STRICT, EncodeStyle.SHALLOW):
            raise HandleTypeError(f"no memo table for style {style!r}")
        if result.laziness != Laziness.VALUE or result.encode != EncodeStyle.NONE:
            raise HandleTypeError("memoized results must be fully forced values")
        if style == EncodeStyle.STRICT and result.access != Access.OBJECT:
            raise HandleTypeError("strict results are objects")
        key = (memo_key(thunk), style)
        with self._lock:
            prev = self._results.get(key)
            if prev is None:
                self._results[key] = result
            elif prev != result:
                raise DeterminismViolationError(
                    f"{thunk.hex()} [{_STYLE_NAMES[style]}] already yielded "
                    f"{prev.hex()}, now {result.hex()}"
                )

    def memo_get(self, thunk: Handle, style: EncodeStyle) -> Optional[Handle]:
        with self._lock:
            return self._results.get((memo_key(thunk), style))

    def objects(self) -> Iterator[tuple[Handle, FixObject]]:
        with self._lock:
            items = list(self._objects.items())
        for key, obj in items:
            yield Handle.from_bytes(key), obj

    def results(self) -> Iterator[tuple[Handle, EncodeStyle, Handle]]:
        with self._lock:
            items = list(self._results.items())
        for (tkey, style), result in items:
            yield Handle.from_bytes(tkey), style, result

    def object_count(self) -> int:
        with self._lock:
            return len(self._objects)

    def save(self, directory: str) -> None:
        objdir = os.path.join(directory, "objects")
        os.makedirs(objdir, exist_ok=True)
        for h, obj in self.objects():
            path = os.path.join(objdir, h.hex())
            if os.path.exists(path):
                continue
            fd, tmp = tempfile.mkstemp(dir=objdir)
            with os.fdopen(fd, "wb") as f:
                f.write(serialize(obj))
            os.replace(tmp, path)
        lines = [
            f"{t.hex()} {_STYLE_NAMES[style]} {r.hex()}\n"
            for t, style, r in self.results()
        ]
        with open(os.path.join(directory, "results.idx"), "w") as f:
            f.writelines(lines)

    @staticmethod
    def load(directory: str) -> "Repository":
        repo = Repository()
        objdir = os.path.join(directory, "objects")
        if os.path.isdir(objdir):
            for name in sorted(os.listdir(objdir)):
                path = os.path.join(objdir, name)
                try:
                    claimed = Handle.from_hex(name)
                except Exception as e:
                    raise CorruptionError(f"{path}: bad handle filename ({e})") from None
                with open(path, "rb") as f:
                    data = f.read()
                obj = deserialize(claimed.kind, data)
                actual = object_handle(obj)
                if actual != claimed:
                    raise CorruptionError(
                        f"{path}: contents hash to {actual.hex()}, not the filename"
                    )
                repo.put(obj)
        idx = os.path.join(directory, "results.idx")
        if os.path.exists(idx):
            with open(idx) as f:
                for lineno, line in enumerate(f, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        thex, sname, rhex = line.split()
                        thunk = Handle.from_hex(thex)
                        result = Handle.from_hex(rhex)
                        style = _STYLE_BY_NAME[sname]
                    except Exception as e:
                        raise CorruptionError(f"{idx}:{lineno}: {e}") from None
                    repo.memo_put(thunk, style, result)
        return repo
