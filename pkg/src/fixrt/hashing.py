"""BLAKE3 hashing.

The digest algorithm behind every content address in this package. Two code
paths produce identical output: a pure-Python scalar path for small inputs
(the common case: handles name trees of a few dozen bytes) and a numpy
lane-parallel path that hashes the independent 1 KiB chunks of large inputs
side by side. Both are pinned against golden vectors generated with the
reference Rust implementation (tests/golden/blake3_vectors.json).

Only plain hashing is implemented; keyed and key-derivation modes are not
needed here.
"""

from __future__ import annotations

import struct

import numpy as np

IV = (
    0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
    0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19,
)

_PERM = (2, 6, 3, 10, 7, 0, 4, 13, 1, 11, 12, 5, 9, 14, 15, 8)

# Word order each round's eight quarter-round mixes consume, resolved to
# indices into the original block so no permuted copies are built per round.
_MSG_SCHEDULE: tuple[tuple[int, ...], ...]
_sched = [tuple(range(16))]
for _ in range(6):
    _sched.append(tuple(_sched[-1][p] for p in _PERM))
_MSG_SCHEDULE = tuple(_sched)
del _sched

# Mix positions: four column steps then four diagonal steps.
_G_POSITIONS = (
    (0, 4, 8, 12), (1, 5, 9, 13), (2, 6, 10, 14), (3, 7, 11, 15),
    (0, 5, 10, 15), (1, 6, 11, 12), (2, 7, 8, 13), (3, 4, 9, 14),
)

CHUNK_START = 1
CHUNK_END = 2
PARENT = 4
ROOT = 8

BLOCK_LEN = 64
CHUNK_LEN = 1024

_MASK32 = 0xFFFFFFFF

# Below this, numpy array overhead beats the lane parallelism.
_LANE_THRESHOLD = 8 * CHUNK_LEN

_unpack16 = struct.Struct("<16I").unpack
_pack8 = struct.Struct("<8I").pack


def _compress(cv, m, counter, block_len, flags):
    """One compression; returns the 8-word chaining value (or root words)."""
    v = [
        cv[0], cv[1], cv[2], cv[3], cv[4], cv[5], cv[6], cv[7],
        IV[0], IV[1], IV[2], IV[3],
        counter & _MASK32, (counter >> 32) & _MASK32, block_len, flags,
    ]
    for sched in _MSG_SCHEDULE:
        si = 0
        for a, b, c, d in _G_POSITIONS:
            mx = m[sched[si]]
            my = m[sched[si + 1]]
            si += 2
            va = (v[a] + v[b] + mx) & _MASK32
            vd = v[d] ^ va
            vd = (vd >> 16) | ((vd << 16) & _MASK32)
            vc = (v[c] + vd) & _MASK32
            vb = v[b] ^ vc
            vb = (vb >> 12) | ((vb << 20) & _MASK32)
            va = (va + vb + my) & _MASK32
            vd ^= va
            vd = (vd >> 8) | ((vd << 24) & _MASK32)
            vc = (vc + vd) & _MASK32
            vb ^= vc
            vb = (vb >> 7) | ((vb << 25) & _MASK32)
            v[a] = va
            v[b] = vb
            v[c] = vc
            v[d] = vd
    return (
        v[0] ^ v[8], v[1] ^ v[9], v[2] ^ v[10], v[3] ^ v[11],
        v[4] ^ v[12], v[5] ^ v[13], v[6] ^ v[14], v[7] ^ v[15],
    )


def _block_words(block: bytes):
    if len(block) < BLOCK_LEN:
        block = block + b"\x00" * (BLOCK_LEN - len(block))
    return _unpack16(block)


def _chunk_cv(data: bytes, start: int, end: int, chunk_counter: int, root: bool):
    """Chaining value of one chunk; `root` marks a single-chunk whole input."""
    cv = IV
    n = end - start
    nblocks = max(1, (n + BLOCK_LEN - 1) // BLOCK_LEN)
    for i in range(nblocks):
        lo = start + i * BLOCK_LEN
        hi = min(lo + BLOCK_LEN, end)
        flags = 0
        if i == 0:
            flags |= CHUNK_START
        if i == nblocks - 1:
            flags |= CHUNK_END
            if root:
                flags |= ROOT
        cv = _compress(cv, _block_words(data[lo:hi]), chunk_counter, hi - lo, flags)
    return cv


def _parent_cv(left, right, flags=PARENT):
    return _compress(IV, tuple(left) + tuple(right), 0, BLOCK_LEN, flags)


def _largest_pow2_below(n: int) -> int:
    return 1 << (n - 1).bit_length() - 1 if n > 1 else 1


def _compress_lanes(cv, m, counter_lo, counter_hi, block_len, flags):
    """Vectorized compression: every argument word is a uint32 lane array."""
    v = list(cv) + [
        np.full_like(counter_lo, IV[0]), np.full_like(counter_lo, IV[1]),
        np.full_like(counter_lo, IV[2]), np.full_like(counter_lo, IV[3]),
        counter_lo, counter_hi,
        np.full_like(counter_lo, block_len), np.full_like(counter_lo, flags),
    ]
    for sched in _MSG_SCHEDULE:
        si = 0
        for a, b, c, d in _G_POSITIONS:
            mx = m[sched[si]]
            my = m[sched[si + 1]]
            si += 2
            va = v[a] + v[b] + mx
            vd = v[d] ^ va
            vd = (vd >> np.uint32(16)) | (vd << np.uint32(16))
            vc = v[c] + vd
            vb = v[b] ^ vc
            vb = (vb >> np.uint32(12)) | (vb << np.uint32(20))
            va = va + vb + my
            vd = vd ^ va
            vd = (vd >> np.uint32(8)) | (vd << np.uint32(24))
            vc = vc + vd
            vb = vb ^ vc
            vb = (vb >> np.uint32(7)) | (vb << np.uint32(25))
            v[a] = va
            v[b] = vb
            v[c] = vc
            v[d] = vd
    return [v[i] ^ v[i + 8] for i in range(8)]


def _chunk_cvs_lanes(data: bytes, n_full: int) -> np.ndarray:
    """Chaining values of the first n_full complete chunks, shape (n_full, 8)."""
    out = np.empty((n_full, 8), dtype=np.uint32)
    batch = 4096
    for base in range(0, n_full, batch):
        n = min(batch, n_full - base)
        raw = np.frombuffer(
            data, dtype="<u4", count=n * (CHUNK_LEN // 4), offset=base * CHUNK_LEN
        ).reshape(n, 16, 16)  # (lane, block, word)
        idx = np.arange(base, base + n, dtype=np.uint64)
        counter_lo = (idx & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        counter_hi = (idx >> np.uint64(32)).astype(np.uint32)
        cv = [np.full(n, IV[i], dtype=np.uint32) for i in range(8)]
        for b in range(16):
            flags = (CHUNK_START if b == 0 else 0) | (CHUNK_END if b == 15 else 0)
            m = [np.ascontiguousarray(raw[:, b, w]) for w in range(16)]
            cv = _compress_lanes(cv, m, counter_lo, counter_hi, BLOCK_LEN, flags)
        for i in range(8):
            out[base : base + n, i] = cv[i]
    return out


def _reduce_lanes(cvs: np.ndarray):
    """Combine a power-of-two block of CVs into one (non-root) CV."""
    while len(cvs) > 1 and len(cvs) % 2 == 0 and len(cvs) >= 16:
        left = cvs[0::2]
        right = cvs[1::2]
        m = [np.ascontiguousarray(left[:, w]) for w in range(8)]
        m += [np.ascontiguousarray(right[:, w]) for w in range(8)]
        zero = np.zeros(len(left), dtype=np.uint32)
        cv = [np.full(len(left), IV[i], dtype=np.uint32) for i in range(8)]
        out = _compress_lanes(cv, m, zero, zero, BLOCK_LEN, PARENT)
        cvs = np.stack(out, axis=1)
    return [tuple(int(w) for w in row) for row in cvs]


def _combine(cvs) -> tuple:
    """Non-root tree combine: left subtree is the largest power of two below."""
    n = len(cvs)
    if n == 1:
        return tuple(int(w) for w in cvs[0])
    if n >= 16 and n & (n - 1) == 0 and isinstance(cvs, np.ndarray):
        reduced = _reduce_lanes(cvs)
        if len(reduced) == 1:
            return reduced[0]
        return _combine(reduced)
    split = _largest_pow2_below(n)
    return _parent_cv(_combine(cvs[:split]), _combine(cvs[split:]))


def blake3(data) -> bytes:
    """32-byte BLAKE3 digest."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError(f"cannot hash {type(data).__name__}")
    data = bytes(data)
    n = len(data)
    if n <= CHUNK_LEN:
        return _pack8(*_chunk_cv(data, 0, n, 0, root=True))

    n_chunks = (n + CHUNK_LEN - 1) // CHUNK_LEN
    n_full = n // CHUNK_LEN
    if n_full * CHUNK_LEN == n:
        n_full = n_chunks  # no partial tail

    if n >= _LANE_THRESHOLD and n_full >= 2:
        cvs_arr = _chunk_cvs_lanes(data, n_full)
        cvs = [tuple(int(w) for w in row) for row in cvs_arr] if n_full < 16 else cvs_arr
    else:
        cvs = [
            _chunk_cv(data, i * CHUNK_LEN, min((i + 1) * CHUNK_LEN, n), i, root=False)
            for i in range(n_full)
        ]
    if n_full < n_chunks:
        tail = [_chunk_cv(data, n_full * CHUNK_LEN, n, n_full, root=False)]
        if isinstance(cvs, np.ndarray):
            cvs = [tuple(int(w) for w in row) for row in cvs]
        cvs = list(cvs) + tail

    split = _largest_pow2_below(len(cvs))
    left = _combine(cvs[:split])
    right = _combine(cvs[split:])
    return _pack8(*_parent_cv(left, right, PARENT | ROOT))


def blake3_24(data) -> bytes:
    """Truncated 192-bit digest: the content field of a non-literal handle."""
    return blake3(data)[:24]
