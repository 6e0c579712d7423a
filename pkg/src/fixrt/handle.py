"""The 32-byte handle: canonical name of every value, reference, and computation.

Layout (fixed convention, golden-tested):

    bytes  0-23   content: truncated 192-bit BLAKE3 digest of the referent's
                  canonical serialization
    bytes 24-29   size, unsigned 48-bit little-endian: byte length for blobs,
                  child count for trees
    bytes 30-31   meta, unsigned 16-bit little-endian:
                      bit 0     literal flag
                      bit 1     kind          0=Blob  1=Tree
                      bit 2     accessibility 0=Object 1=Ref
                      bits 3-4  laziness      0=Value 1=Application
                                              2=Identification 3=Selection
                      bits 5-6  encode style  0=None 1=Strict 2=Shallow
                      bits 7-11 literal payload length (zero unless literal)
                      bits 12-15 reserved, must be zero

Blobs of 30 bytes or fewer are literals: the payload occupies bytes 0-29
(the digest and size fields together, left-justified and zero-padded) and
its length lives in meta bits 7-11. That is how a 30-byte payload fits a
32-byte handle; the digest-form size field cannot hold it.

Blob and tree digests are domain-separated with a leading tag byte so the two
namespaces cannot collide. Handles are immutable and freely shareable.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple, Sequence

from .errors import HandleTypeError, MalformedHandleError, SizeOverflowError
from .hashing import blake3_24

HANDLE_LEN = 32
LITERAL_MAX = 30
SIZE_MAX = (1 << 48) - 1

BLOB_DOMAIN = b"\x00"
TREE_DOMAIN = b"\x01"


class Kind(IntEnum):
    BLOB = 0
    TREE = 1


class Access(IntEnum):
    OBJECT = 0
    REF = 1


class Laziness(IntEnum):
    VALUE = 0
    APPLICATION = 1
    IDENTIFICATION = 2
    SELECTION = 3


class EncodeStyle(IntEnum):
    NONE = 0
    STRICT = 1
    SHALLOW = 2


_META_LITERAL = 1 << 0
_META_KIND = 1 << 1
_META_ACCESS = 1 << 2
_META_LAZY_SHIFT = 3
_META_ENCODE_SHIFT = 5
_META_LITSIZE_SHIFT = 7
_META_LITSIZE_MASK = 0x1F
_META_RESERVED = ~((1 << 12) - 1) & 0xFFFF


class HandleInfo(NamedTuple):
    kind: Kind
    access: Access
    laziness: Laziness
    encode: EncodeStyle
    size: int


class Handle:
    """Immutable 32-byte handle. Equality and hashing are byte-exact."""

    __slots__ = ("raw", "content", "size", "literal", "kind", "access",
                 "laziness", "encode", "_hash", "_obj")

    def __init__(self, raw: bytes, content: bytes, size: int, literal: bool,
                 kind: Kind, access: Access, laziness: Laziness,
                 encode: EncodeStyle):
        # Internal: callers go through from_fields / from_bytes.
        self.raw = raw
        self.content = content
        self.size = size
        self.literal = literal
        self.kind = kind
        self.access = access
        self.laziness = laziness
        self.encode = encode
        self._hash = hash(raw)

    @staticmethod
    def _build(content: bytes, size: int, literal: bool, kind: Kind,
               access: Access, laziness: Laziness, encode: EncodeStyle) -> "Handle":
        # Unvalidated construction for fields already known to be legal.
        # `content` is the 30-byte padded payload for literals, else the
        # 24-byte digest.
        meta = (
            (_META_LITERAL if literal else 0)
            | (_META_KIND if kind == Kind.TREE else 0)
            | (_META_ACCESS if access == Access.REF else 0)
            | (laziness << _META_LAZY_SHIFT)
            | (encode << _META_ENCODE_SHIFT)
        )
        if literal:
            meta |= size << _META_LITSIZE_SHIFT
            raw = content + meta.to_bytes(2, "little")
        else:
            raw = content + size.to_bytes(6, "little") + meta.to_bytes(2, "little")
        return Handle(raw, content, size, literal, kind, access, laziness, encode)

    @staticmethod
    def from_fields(content: bytes, size: int, *, literal: bool, kind: Kind,
                    access: Access = Access.OBJECT,
                    laziness: Laziness = Laziness.VALUE,
                    encode: EncodeStyle = EncodeStyle.NONE) -> "Handle":
        if not 0 <= size <= SIZE_MAX:
            raise SizeOverflowError(f"size {size} exceeds 48 bits")
        want = 30 if literal else 24
        if len(content) != want:
            raise MalformedHandleError(f"content must be {want} bytes, got {len(content)}")
        h = Handle._build(content, size, literal, Kind(kind), Access(access),
                          Laziness(laziness), EncodeStyle(encode))
        _validate(h)
        return h

    @staticmethod
    def from_bytes(raw: bytes) -> "Handle":
        if len(raw) != HANDLE_LEN:
            raise MalformedHandleError(f"handle must be {HANDLE_LEN} bytes, got {len(raw)}")
        raw = bytes(raw)
        meta = int.from_bytes(raw[30:32], "little")
        if meta & _META_RESERVED:
            raise MalformedHandleError(f"reserved meta bits set: {meta:#06x}")
        encode_bits = (meta >> _META_ENCODE_SHIFT) & 0b11
        if encode_bits == 3:
            raise MalformedHandleError("encode style 3 is not assigned")
        literal = bool(meta & _META_LITERAL)
        litsize = (meta >> _META_LITSIZE_SHIFT) & _META_LITSIZE_MASK
        if literal:
            content, size = raw[:30], litsize
        else:
            if litsize:
                raise MalformedHandleError("literal-size bits set on a digest handle")
            content, size = raw[:24], int.from_bytes(raw[24:30], "little")
        h = Handle(
            raw,
            content,
            size,
            literal,
            Kind((meta >> 1) & 1),
            Access((meta >> 2) & 1),
            Laziness((meta >> _META_LAZY_SHIFT) & 0b11),
            EncodeStyle(encode_bits),
        )
        _validate(h)
        return h

    @staticmethod
    def from_hex(text: str) -> "Handle":
        try:
            raw = bytes.fromhex(text)
        except ValueError as e:
            raise MalformedHandleError(f"bad handle hex: {e}") from None
        return Handle.from_bytes(raw)

    def hex(self) -> str:
        return self.raw.hex()

    @property
    def is_value(self) -> bool:
        return self.laziness == Laziness.VALUE

    @property
    def is_thunk(self) -> bool:
        return self.laziness != Laziness.VALUE and self.encode == EncodeStyle.NONE

    @property
    def is_encode(self) -> bool:
        return self.encode != EncodeStyle.NONE

    def literal_bytes(self) -> bytes:
        if not self.literal:
            raise HandleTypeError("not a literal handle")
        return self.content[: self.size]

    def __eq__(self, other):
        return isinstance(other, Handle) and self.raw == other.raw

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        bits = [self.kind.name.lower()]
        if self.literal:
            bits.append("literal")
        if self.access == Access.REF:
            bits.append("ref")
        if self.laziness != Laziness.VALUE:
            bits.append(self.laziness.name.lower())
        if self.encode != EncodeStyle.NONE:
            bits.append(f"{self.encode.name.lower()}-encode")
        return f"<Handle {'/'.join(bits)} size={self.size} {self.raw.hex()[:16]}…>"


def _validate(h: Handle) -> None:
    if h.literal:
        if h.kind != Kind.BLOB:
            raise MalformedHandleError("literal handles must be blobs")
        if h.size > LITERAL_MAX:
            raise MalformedHandleError(f"literal size {h.size} exceeds {LITERAL_MAX}")
        if any(h.content[h.size :]):
            raise MalformedHandleError("literal padding beyond size must be zero")
    if h.size > SIZE_MAX:
        raise SizeOverflowError(f"size {h.size} exceeds 48 bits")
    if h.encode != EncodeStyle.NONE and h.laziness == Laziness.VALUE:
        raise MalformedHandleError("encode style on a value handle")


def blob_handle(data) -> Handle:
    """Deterministic handle of a blob: literal form up to 30 bytes, else digest."""
    n = len(data)
    if n > SIZE_MAX:
        raise SizeOverflowError(f"blob of {n} bytes exceeds the 48-bit size field")
    if n <= LITERAL_MAX:
        content = bytes(data) + b"\x00" * (30 - n)
        return Handle.from_fields(content, n, literal=True, kind=Kind.BLOB)
    return Handle.from_fields(blake3_24(BLOB_DOMAIN + bytes(data)), n,
                              literal=False, kind=Kind.BLOB)


def tree_handle(children: Sequence[Handle]) -> Handle:
    """Deterministic handle of a tree: digest over the ordered child handles."""
    n = len(children)
    if n > SIZE_MAX:
        raise SizeOverflowError(f"tree of {n} children exceeds the 48-bit size field")
    content = blake3_24(TREE_DOMAIN + b"".join(c.raw for c in children))
    return Handle.from_fields(content, n, literal=False, kind=Kind.TREE)


def retag(h: Handle, *, access: Access | None = None,
          laziness: Laziness | None = None,
          encode: EncodeStyle | None = None) -> Handle:
    """Same content and size, different meta. Illegal combinations raise."""
    new_access = h.access if access is None else Access(access)
    new_lazy = h.laziness if laziness is None else Laziness(laziness)
    new_encode = h.encode if encode is None else EncodeStyle(encode)
    if new_encode != EncodeStyle.NONE and new_lazy == Laziness.VALUE:
        raise HandleTypeError("an encode can only wrap a thunk, not a value")
    if new_lazy != Laziness.VALUE and h.kind != Kind.TREE:
        # Every thunk's definition serializes as a tree; see semantics module.
        raise HandleTypeError("thunk handles carry tree-kind definitions")
    return Handle.from_fields(h.content, h.size, literal=h.literal, kind=h.kind,
                              access=new_access, laziness=new_lazy,
                              encode=new_encode)


def inspect(h) -> HandleInfo:
    """Pure decode of meta + size; accepts a Handle or raw 32 bytes."""
    if not isinstance(h, Handle):
        h = Handle.from_bytes(h)
    return HandleInfo(h.kind, h.access, h.laziness, h.encode, h.size)


def as_object(h: Handle) -> Handle:
    """The plain-value Object form: meta stripped to literal+kind only."""
    if (h.access == Access.OBJECT and h.laziness == Laziness.VALUE
            and h.encode == EncodeStyle.NONE):
        return h
    try:
        return h._obj
    except AttributeError:
        obj = Handle._build(h.content, h.size, h.literal, h.kind,
                            Access.OBJECT, Laziness.VALUE, EncodeStyle.NONE)
        h._obj = obj
        return obj


def storage_key(h: Handle) -> bytes:
    """Key under which the referent's data is stored: object-form raw bytes."""
    return as_object(h).raw


def memo_key(h: Handle) -> bytes:
    """Result-table key for a thunk: laziness kept, access/encode stripped."""
    if h.laziness == Laziness.VALUE:
        raise HandleTypeError("memo keys exist only for thunks")
    if h.access == Access.OBJECT and h.encode == EncodeStyle.NONE:
        return h.raw
    return Handle._build(h.content, h.size, h.literal, h.kind,
                         Access.OBJECT, h.laziness, EncodeStyle.NONE).raw
