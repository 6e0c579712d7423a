import pytest

from fixrt.bptree import build_bptree, generate_keys, lookup_thunk, value_for
from fixrt.runtime import Counters, Runtime
from fixrt.semantics import EvalContext, eval_strict
from fixrt.store import Repository


@pytest.fixture
def small_tree():
    # Function-scoped: a shared repo would leak memoized lookups between tests.
    repo = Repository()
    keys = generate_keys(500, seed=7)
    tree = build_bptree(repo, keys, arity=8)
    return repo, keys, tree


class TestBuild:
    def test_depth_and_shape(self, small_tree):
        repo, keys, tree = small_tree
        # 500 keys, 8 per leaf -> 63 leaves -> 8 internals -> root
        assert tree.depth == 3
        assert tree.key_count == 500

    def test_single_leaf_when_arity_covers_all(self):
        repo = Repository()
        keys = generate_keys(50, seed=3)
        tree = build_bptree(repo, keys, arity=64)
        assert tree.depth == 1

    def test_keys_sorted_requirement(self):
        repo = Repository()
        with pytest.raises(ValueError):
            build_bptree(repo, [], arity=4)


class TestLookup:
    def test_every_key_found(self, small_tree, registry):
        repo, keys, tree = small_tree
        ctx = EvalContext(repo, registry, Counters())
        for key in keys[:: len(keys) // 40]:
            result = eval_strict(ctx, lookup_thunk(repo, tree, key))
            assert repo.get(result).data == value_for(key)

    def test_invocations_equal_depth(self, small_tree, registry):
        repo, keys, tree = small_tree
        rt = Runtime(repo, registry, workers=2)
        try:
            for key in (keys[0], keys[123], keys[-1]):
                before = rt.counters.get("guest_invocations")
                rt.eval(lookup_thunk(repo, tree, key), timeout=30)
                assert rt.counters.get("guest_invocations") - before == tree.depth
        finally:
            rt.shutdown()

    def test_miss_yields_empty_blob(self, small_tree, registry):
        repo, keys, tree = small_tree
        ctx = EvalContext(repo, registry, Counters())
        result = eval_strict(ctx, lookup_thunk(repo, tree, b"@@absent-key@@"))
        assert repo.get(result).data == b""

    def test_untraversed_siblings_never_attached(self, small_tree, registry):
        # The minimum-repository guard would fail any attach of a sibling
        # node; count the attached info blobs instead: one per level.
        repo, keys, tree = small_tree
        ctx = EvalContext(repo, registry, Counters())
        before = ctx.counters.get("bytes_attached")
        eval_strict(ctx, lookup_thunk(repo, tree, keys[250]))
        attached = ctx.counters.get("bytes_attached") - before
        # generous cap: per level the info blob (~arity keys), the input
        # tree, and the key; anything broader would blow this bound
        assert attached < tree.depth * 2000
