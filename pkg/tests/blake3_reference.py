"""Slow, spec-literal BLAKE3 used only to cross-check the production code.

Written as a direct transcription of the algorithm description: explicit
chunk list, recursive tree combination, no batching or lane tricks.
"""

IV = (0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
      0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19)
PERM = (2, 6, 3, 10, 7, 0, 4, 13, 1, 11, 12, 5, 9, 14, 15, 8)
CHUNK_START, CHUNK_END, PARENT, ROOT = 1, 2, 4, 8
MASK = 0xFFFFFFFF


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & MASK


def _g(v, a, b, c, d, mx, my):
    v[a] = (v[a] + v[b] + mx) & MASK
    v[d] = _rotr(v[d] ^ v[a], 16)
    v[c] = (v[c] + v[d]) & MASK
    v[b] = _rotr(v[b] ^ v[c], 12)
    v[a] = (v[a] + v[b] + my) & MASK
    v[d] = _rotr(v[d] ^ v[a], 8)
    v[c] = (v[c] + v[d]) & MASK
    v[b] = _rotr(v[b] ^ v[c], 7)


def _compress(cv, block, counter, block_len, flags):
    m = [int.from_bytes(block[i:i + 4], "little") for i in range(0, 64, 4)]
    v = list(cv) + list(IV[:4]) + [counter & MASK, (counter >> 32) & MASK,
                                   block_len, flags]
    for _ in range(7):
        _g(v, 0, 4, 8, 12, m[0], m[1])
        _g(v, 1, 5, 9, 13, m[2], m[3])
        _g(v, 2, 6, 10, 14, m[4], m[5])
        _g(v, 3, 7, 11, 15, m[6], m[7])
        _g(v, 0, 5, 10, 15, m[8], m[9])
        _g(v, 1, 6, 11, 12, m[10], m[11])
        _g(v, 2, 7, 8, 13, m[12], m[13])
        _g(v, 3, 4, 9, 14, m[14], m[15])
        m = [m[p] for p in PERM]
    return [v[i] ^ v[i + 8] for i in range(8)]


def _chunk_cv(chunk, counter, root):
    blocks = [chunk[i:i + 64] for i in range(0, len(chunk), 64)] or [b""]
    cv = list(IV)
    for i, block in enumerate(blocks):
        flags = (CHUNK_START if i == 0 else 0) | (
            (CHUNK_END | (ROOT if root else 0)) if i == len(blocks) - 1 else 0)
        cv = _compress(cv, block + b"\x00" * (64 - len(block)), counter,
                       len(block), flags)
    return cv


def _combine(cvs, root):
    if len(cvs) == 1:
        return cvs[0]
    split = 1
    while split * 2 < len(cvs):
        split *= 2
    left = _combine(cvs[:split], False)
    right = _combine(cvs[split:], False)
    block = b"".join(w.to_bytes(4, "little") for w in left + right)
    return _compress(IV, block, 0, 64, PARENT | (ROOT if root else 0))


def blake3_reference(data: bytes) -> bytes:
    chunks = [data[i:i + 1024] for i in range(0, len(data), 1024)] or [b""]
    if len(chunks) == 1:
        cv = _chunk_cv(chunks[0], 0, root=True)
    else:
        cvs = [_chunk_cv(c, i, root=False) for i, c in enumerate(chunks)]
        cv = _combine(cvs, root=True)
    return b"".join(w.to_bytes(4, "little") for w in cv)
