import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixrt.errors import HandleTypeError, MalformedHandleError, SizeOverflowError
from fixrt.handle import (
    LITERAL_MAX,
    Access,
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    as_object,
    blob_handle,
    inspect,
    memo_key,
    retag,
    storage_key,
    tree_handle,
)

# Pinned with the reference BLAKE3 implementation before the build.
BLOB_31_ZEROS_CONTENT = "2ada83c1819a5372dae1238fc1ded123c8104fdaa15862aa"
EMPTY_TREE_CONTENT = "48fc721fbbc172e0925fa27af1671de225ba927134802998"


class TestBlobHandle:
    def test_hi_literal(self):
        h = blob_handle(b"hi")
        assert h.literal and h.kind == Kind.BLOB and h.size == 2
        assert h.content == b"hi" + b"\x00" * 28
        # payload bytes 0-29, meta = literal flag | length 2 in bits 7-11
        assert h.raw.hex() == "6869" + "00" * 28 + "0101"

    def test_31_zeros_digest(self):
        h = blob_handle(b"\x00" * 31)
        assert not h.literal
        assert h.size == 31
        assert h.content.hex() == BLOB_31_ZEROS_CONTENT

    def test_empty_literal(self):
        h = blob_handle(b"")
        assert h.literal and h.size == 0 and h.content == b"\x00" * 30

    def test_literal_boundary(self):
        for n in range(LITERAL_MAX + 1):
            h = blob_handle(b"x" * n)
            assert h.literal and h.literal_bytes() == b"x" * n
        assert not blob_handle(b"x" * (LITERAL_MAX + 1)).literal

    def test_size_overflow(self):
        with pytest.raises(SizeOverflowError):
            Handle.from_fields(b"\x00" * 24, 1 << 48, literal=False, kind=Kind.BLOB)


class TestTreeHandle:
    def test_empty_tree(self):
        h = tree_handle([])
        assert h.kind == Kind.TREE and h.size == 0
        assert h.content.hex() == EMPTY_TREE_CONTENT

    def test_order_matters(self):
        a, b = blob_handle(b"a"), blob_handle(b"b")
        assert tree_handle([a, b]) != tree_handle([b, a])

    def test_deterministic(self):
        a, b = blob_handle(b"a"), blob_handle(b"b")
        assert tree_handle([a, b]) == tree_handle([a, b])

    def test_blob_tree_domains_disjoint(self):
        # A blob whose bytes equal a tree serialization still gets its own name.
        child = blob_handle(b"payload-x")
        t = tree_handle([child])
        b = blob_handle(child.raw)
        assert t.content != b.content


class TestRetag:
    def test_object_to_ref(self):
        h = blob_handle(b"\x01" * 31)
        r = retag(h, access=Access.REF)
        assert r.access == Access.REF
        assert r.content == h.content and r.size == h.size

    def test_thunk_to_strict_encode(self):
        t = retag(tree_handle([blob_handle(b"x")]), laziness=Laziness.APPLICATION)
        e = retag(t, encode=EncodeStyle.STRICT)
        assert e.encode == EncodeStyle.STRICT and e.laziness == Laziness.APPLICATION
        assert e.content == t.content

    def test_encode_on_value_rejected(self):
        with pytest.raises(HandleTypeError):
            retag(blob_handle(b"v"), encode=EncodeStyle.STRICT)

    def test_thunk_must_be_tree_kind(self):
        with pytest.raises(HandleTypeError):
            retag(blob_handle(b"v"), laziness=Laziness.APPLICATION)

    def test_never_changes_content_or_size(self):
        h = tree_handle([blob_handle(b"a"), blob_handle(b"b")])
        for laz in (Laziness.APPLICATION, Laziness.IDENTIFICATION, Laziness.SELECTION):
            t = retag(h, laziness=laz)
            assert (t.content, t.size) == (h.content, h.size)


class TestInspect:
    def test_literal_hi(self):
        info = inspect(blob_handle(b"hi"))
        assert info == (Kind.BLOB, Access.OBJECT, Laziness.VALUE, EncodeStyle.NONE, 2)

    def test_ref_of_tree(self):
        t = tree_handle([blob_handle(bytes([i])) for i in range(5)])
        info = inspect(retag(t, access=Access.REF).raw)
        assert info.kind == Kind.TREE and info.access == Access.REF
        assert info.size == 5

    def test_reserved_bit_rejected(self):
        raw = bytearray(blob_handle(b"hi").raw)
        raw[31] |= 0x80
        with pytest.raises(MalformedHandleError):
            inspect(bytes(raw))

    def test_literal_size_bits_on_digest_rejected(self):
        raw = bytearray(blob_handle(b"x" * 40).raw)
        raw[30] |= 0x80  # length bits only belong to literals
        with pytest.raises(MalformedHandleError):
            Handle.from_bytes(bytes(raw))

    def test_encode_style_three_rejected(self):
        raw = bytearray(tree_handle([]).raw)
        raw[30] = (raw[30] | (3 << 5) | (1 << 3))  # laziness=1, encode=3
        with pytest.raises(MalformedHandleError):
            Handle.from_bytes(bytes(raw))

    def test_literal_padding_must_be_zero(self):
        raw = bytearray(blob_handle(b"hi").raw)
        raw[5] = 0xFF
        with pytest.raises(MalformedHandleError):
            Handle.from_bytes(bytes(raw))


class TestRoundTrip:
    def test_valid_handles_round_trip(self):
        samples = [
            blob_handle(b""), blob_handle(b"hi"), blob_handle(b"z" * 31),
            tree_handle([]), tree_handle([blob_handle(b"a")]),
        ]
        t = retag(tree_handle([blob_handle(b"q")]), laziness=Laziness.SELECTION)
        samples += [t, retag(t, encode=EncodeStyle.SHALLOW),
                    retag(blob_handle(b"r" * 31), access=Access.REF)]
        for h in samples:
            again = Handle.from_bytes(h.raw)
            assert again == h and again.raw == h.raw

    def test_hex_round_trip(self):
        h = blob_handle(b"roundtrip")
        assert Handle.from_hex(h.hex()) == h
        assert len(h.hex()) == 64 and h.hex() == h.hex().lower()

    def test_wrong_length_rejected(self):
        with pytest.raises(MalformedHandleError):
            Handle.from_bytes(b"\x00" * 31)


@given(st.lists(st.binary(min_size=0, max_size=64), min_size=1, max_size=40,
                unique=True))
@settings(max_examples=120, deadline=None)
def test_injectivity_blobs(blobs):
    handles = [blob_handle(b) for b in blobs]
    assert len(set(handles)) == len(blobs)


@given(st.lists(st.lists(st.integers(0, 255), max_size=6), min_size=1,
                max_size=25, unique_by=lambda x: tuple(x)))
@settings(max_examples=60, deadline=None)
def test_injectivity_trees(shapes):
    trees = [tree_handle([blob_handle(bytes([v])) for v in shape])
             for shape in shapes]
    assert len(set(trees)) == len(shapes)


_valid_meta = st.tuples(
    st.sampled_from(list(Kind)),
    st.sampled_from(list(Access)),
    st.sampled_from(list(Laziness)),
    st.sampled_from(list(EncodeStyle)),
).filter(lambda t: not (t[3] != EncodeStyle.NONE and t[2] == Laziness.VALUE))


@given(st.binary(min_size=24, max_size=24), st.integers(0, (1 << 48) - 1),
       _valid_meta)
@settings(max_examples=150, deadline=None)
def test_round_trip_random_valid_handles(content, size, meta):
    kind, access, laziness, encode = meta
    h = Handle.from_fields(content, size, literal=False, kind=kind,
                           access=access, laziness=laziness, encode=encode)
    again = Handle.from_bytes(h.raw)
    assert again.raw == h.raw
    assert (again.kind, again.access, again.laziness, again.encode,
            again.size) == (kind, access, laziness, encode, size)


@given(st.binary(min_size=0, max_size=LITERAL_MAX))
@settings(max_examples=80, deadline=None)
def test_round_trip_random_literals(payload):
    h = blob_handle(payload)
    again = Handle.from_bytes(h.raw)
    assert again.raw == h.raw and again.literal_bytes() == payload


def test_storage_and_memo_keys():
    t = tree_handle([blob_handle(b"a")])
    app = retag(t, laziness=Laziness.APPLICATION)
    enc = retag(app, encode=EncodeStyle.STRICT)
    assert storage_key(app) == t.raw
    assert storage_key(enc) == t.raw
    assert memo_key(app) == memo_key(enc) == app.raw
    sel = retag(t, laziness=Laziness.SELECTION)
    assert memo_key(sel) != memo_key(app)
    with pytest.raises(HandleTypeError):
        memo_key(blob_handle(b"v"))


def test_as_object_idempotent():
    t = tree_handle([blob_handle(b"a")])
    app = retag(t, laziness=Laziness.APPLICATION)
    assert as_object(app) == t
    assert as_object(t) is t
