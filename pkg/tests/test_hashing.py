import json
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixrt.hashing import CHUNK_LEN, blake3, blake3_24

from blake3_reference import blake3_reference

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "blake3_vectors.json")

with open(GOLDEN) as f:
    _VECTORS = json.load(f)


def _pattern(n: int) -> bytes:
    return bytes(i % 251 for i in range(n))


@pytest.mark.parametrize("length,expected", _VECTORS["pattern"])
def test_golden_vectors(length, expected):
    assert blake3(_pattern(length)).hex() == expected


def test_domain_tag_goldens():
    assert blake3(b"\x00" * 32).hex() == _VECTORS["blob_tag_31_zeros"]
    assert blake3(b"\x01").hex() == _VECTORS["tree_tag_empty"]


def test_truncation():
    d = blake3(b"anything")
    assert blake3_24(b"anything") == d[:24]
    assert len(blake3_24(b"")) == 24


@pytest.mark.parametrize("length", [
    0, 1, 63, 64, 65, 1023, 1024, 1025, 2048, 3100, 5 * CHUNK_LEN,
    8 * CHUNK_LEN, 8 * CHUNK_LEN + 1, 16 * CHUNK_LEN, 17 * CHUNK_LEN + 513,
    33 * CHUNK_LEN,
])
def test_matches_reference(length):
    data = _pattern(length)
    assert blake3(data) == blake3_reference(data)


@given(st.binary(min_size=0, max_size=3000))
@settings(max_examples=60, deadline=None)
def test_matches_reference_random(data):
    assert blake3(data) == blake3_reference(data)


def test_lane_path_equals_scalar_path():
    # Exactly the boundary where the numpy path switches on.
    for n in (8 * CHUNK_LEN - 1, 8 * CHUNK_LEN, 8 * CHUNK_LEN + 1,
              12 * CHUNK_LEN + 100):
        data = os.urandom(n)
        assert blake3(data) == blake3_reference(data)


def test_rejects_non_bytes():
    with pytest.raises(TypeError):
        blake3("text")
