"""Immutable B+-tree built from content-addressed trees.

Node layout: [info-blob, child...] where the info blob is a tagged, packed
key array (procapi.pack_node_info). Internal nodes hold separator keys (the
smallest key of each child after the first) plus child node handles; leaves
hold their keys plus value handles. Lookups run as a chain of lookup-step
invocations, one per level, that descend via selection thunks: the next
node's info is demanded strictly, the node itself only shallowly, so sibling
subtrees never enter any invocation's minimum repository.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .handle import Handle, as_object
from .procapi import name_blob, pack_node_info
from .semantics import ResourceLimits, application_thunk
from .store import Blob, Repository, Tree

LOOKUP_PROC = "bptree_lookup_step"


@dataclass(frozen=True)
class BPTree:
    root: Handle
    root_info: Handle
    depth: int
    arity: int
    key_count: int


def generate_keys(count: int, seed: int, min_len: int = 8, max_len: int = 24) -> list[bytes]:
    """Deterministic sorted unique keys, lowercase ASCII."""
    rng = random.Random(seed)
    keys: set[bytes] = set()
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    while len(keys) < count:
        n = rng.randint(min_len, max_len)
        keys.add("".join(rng.choice(alphabet) for _ in range(n)).encode())
    return sorted(keys)


def value_for(key: bytes) -> bytes:
    return b"=" + key


def build_bptree(repo: Repository, keys: list[bytes], arity: int) -> BPTree:
    if arity < 2:
        raise ValueError("arity must be at least 2")
    if not keys:
        raise ValueError("cannot build an empty tree")

    level: list[tuple[Handle, bytes]] = []  # (node, smallest key in subtree)
    for i in range(0, len(keys), arity):
        group = keys[i : i + arity]
        info = repo.put(Blob(pack_node_info(b"L", group)))
        values = tuple(repo.put(Blob(value_for(k))) for k in group)
        node = repo.put(Tree((info, *values)))
        level.append((node, group[0]))
    depth = 1
    while len(level) > 1:
        nxt: list[tuple[Handle, bytes]] = []
        for i in range(0, len(level), arity):
            group = level[i : i + arity]
            seps = [mk for _, mk in group[1:]]
            info = repo.put(Blob(pack_node_info(b"I", seps)))
            node = repo.put(Tree((info, *(h for h, _ in group))))
            nxt.append((node, group[0][1]))
        level = nxt
        depth += 1
    root = level[0][0]
    root_info = repo.get(root).children[0]
    return BPTree(root, root_info, depth, arity, len(keys))


def lookup_thunk(repo: Repository, tree: BPTree, key: bytes,
                 limits: ResourceLimits | None = None) -> Handle:
    """The application whose strict evaluation is the value stored for key."""
    rl = repo.put(Blob((limits or ResourceLimits(output_size_hint=64)).to_blob()))
    fn = name_blob(repo, LOOKUP_PROC)
    key_h = repo.put(Blob(key))
    input_tree = repo.put(Tree((rl, fn, key_h, tree.root_info, as_object(tree.root))))
    return application_thunk(repo, input_tree)
