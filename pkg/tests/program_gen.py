"""Randomized small programs: DAGs of add/concat/if/select/identity thunks.

Used for oracle-equivalence and distribution-transparency testing. Programs
are built so that every evaluation succeeds: builtin arguments are values or
strict encodes (never bare thunks or refs, which guests cannot attach) and
selection indices are always in range.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from fixrt.handle import Handle
from fixrt.procapi import encode_u64, name_blob
from fixrt.semantics import (
    ResourceLimits,
    application_thunk,
    identification_thunk,
    selection_thunk,
    shallow_encode,
    strict_encode,
)
from fixrt.store import Blob, FixObject, Repository, Tree


@dataclass
class GenProgram:
    root: Handle
    data_objects: list[FixObject] = field(default_factory=list)


class _Gen:
    def __init__(self, repo: Repository, rng: random.Random, max_depth: int):
        self.repo = repo
        self.rng = rng
        self.max_depth = max_depth
        self.out = GenProgram(root=None)  # root filled at the end
        self.rl = repo.put(Blob(ResourceLimits(output_size_hint=16).to_blob()))
        self.fns = {name: name_blob(repo, name) for name in ("add", "concat", "if")}

    def data_blob(self) -> Handle:
        if self.rng.random() < 0.5:
            return self.repo.put(Blob(encode_u64(self.rng.randrange(1 << 16))))
        body = bytes(self.rng.randrange(256) for _ in range(self.rng.randint(31, 80)))
        h = self.repo.put(Blob(body))
        self.out.data_objects.append(Blob(body))
        return h

    def data_tree(self, depth: int) -> Handle:
        children = tuple(self.data_blob() for _ in range(self.rng.randint(1, 4)))
        h = self.repo.put(Tree(children))
        self.out.data_objects.append(Tree(children))
        return h

    def blob_source(self, depth: int) -> Handle:
        """A handle whose strict evaluation is an attachable blob object."""
        roll = self.rng.random()
        if depth <= 0 or roll < 0.35:
            return self.data_blob()
        if roll < 0.55:
            return strict_encode(self.application(depth - 1, numeric=True))
        if roll < 0.75:
            return strict_encode(
                identification_thunk(self.repo, self.blob_source(depth - 1)))
        tree = self.data_tree(depth - 1)
        index = self.rng.randrange(len(self.repo.get(tree).children))
        return strict_encode(selection_thunk(self.repo, tree, index))

    def application(self, depth: int, numeric: bool = False) -> Handle:
        name = "add" if (numeric or depth <= 0) else self.rng.choice(
            ["add", "add", "concat", "if"])
        if name == "add":
            args = (self.blob_source(depth - 1), self.blob_source(depth - 1))
        elif name == "concat":
            args = tuple(self.blob_source(depth - 1)
                         for _ in range(self.rng.randint(1, 3)))
        else:  # if: lazy branches may be anything, only one is ever evaluated
            pred = self.data_blob() if self.rng.random() < 0.5 else \
                self.blob_source(depth - 1)
            args = (pred, self.any_node(depth - 1), self.any_node(depth - 1))
        t = self.repo.put(Tree((self.rl, self.fns[name], *args)))
        return application_thunk(self.repo, t)

    def any_node(self, depth: int) -> Handle:
        roll = self.rng.random()
        if depth <= 0 or roll < 0.25:
            return self.data_blob()
        if roll < 0.4:
            return self.data_tree(depth - 1)
        if roll < 0.55:
            return identification_thunk(self.repo, self.any_node(depth - 1))
        if roll < 0.7:
            tree = self.data_tree(depth - 1)
            index = self.rng.randrange(len(self.repo.get(tree).children))
            return selection_thunk(self.repo, tree, index)
        if roll < 0.85:
            return self.application(depth - 1)
        inner = self.application(depth - 1)
        return strict_encode(inner) if self.rng.random() < 0.5 else shallow_encode(inner)

    def finish(self) -> GenProgram:
        self.out.root = self.application(self.max_depth)
        return self.out


def generate_program(repo: Repository, seed: int, max_depth: int = 6) -> GenProgram:
    return _Gen(repo, random.Random(seed), max_depth).finish()
