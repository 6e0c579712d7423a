import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixrt.errors import CorruptionError, DeterminismViolationError, NotFoundError
from fixrt.handle import Access, EncodeStyle, Laziness, blob_handle, retag, tree_handle
from fixrt.store import Blob, Repository, Tree, deserialize, object_handle, serialize


def _thunk(repo, payload=b"defn"):
    t = repo.put(Tree((repo.put(Blob(payload)),)))
    return retag(t, laziness=Laziness.IDENTIFICATION)


class TestPutGet:
    def test_literal_blob_reconstructed_without_storage(self, repo):
        h = repo.put(Blob(b"hi"))
        assert repo.object_count() == 0  # literals are elided
        assert repo.get(h) == Blob(b"hi")

    def test_put_idempotent(self, repo):
        c1, c2 = blob_handle(b"a" * 31), blob_handle(b"b" * 31)
        repo.put(Blob(b"a" * 31))
        repo.put(Blob(b"b" * 31))
        h1 = repo.put(Tree((c1, c2)))
        h2 = repo.put(Tree((c1, c2)))
        assert h1 == h2
        assert sum(1 for k, _ in repo.objects() if k.raw == h1.raw) == 1

    def test_megabyte_round_trip(self, repo):
        data = os.urandom(1 << 20)
        h = repo.put(Blob(data))
        assert repo.get(h).data == data

    def test_get_unknown_digest(self, repo):
        with pytest.raises(NotFoundError):
            repo.get(blob_handle(b"never stored" * 5))

    def test_get_via_ref_and_thunk_forms(self, repo):
        data = b"shared" * 10
        h = repo.put(Blob(data))
        assert repo.get(retag(h, access=Access.REF)).data == data
        t = repo.put(Tree((h,)))
        thunk = retag(t, laziness=Laziness.APPLICATION)
        assert repo.get(thunk) == Tree((h,))

    def test_recomputed_handle_matches_storage_key(self, repo):
        repo.put(Blob(b"x" * 100))
        repo.put(Tree((blob_handle(b"y"),)))
        for h, obj in repo.objects():
            assert object_handle(obj) == h


class TestMemo:
    def test_put_then_get(self, repo):
        t = _thunk(repo)
        r = blob_handle(b"result")
        repo.memo_put(t, EncodeStyle.STRICT, r)
        assert repo.memo_get(t, EncodeStyle.STRICT) == r

    def test_absent_before_put(self, repo):
        assert repo.memo_get(_thunk(repo), EncodeStyle.STRICT) is None

    def test_determinism_violation(self, repo):
        t = _thunk(repo)
        repo.memo_put(t, EncodeStyle.STRICT, blob_handle(b"r1"))
        repo.memo_put(t, EncodeStyle.STRICT, blob_handle(b"r1"))  # same is fine
        with pytest.raises(DeterminismViolationError):
            repo.memo_put(t, EncodeStyle.STRICT, blob_handle(b"r2"))

    def test_styles_memoized_independently(self, repo):
        t = _thunk(repo)
        obj = blob_handle(b"v")
        repo.memo_put(t, EncodeStyle.STRICT, obj)
        assert repo.memo_get(t, EncodeStyle.SHALLOW) is None
        repo.memo_put(t, EncodeStyle.SHALLOW, retag(obj, access=Access.REF))

    def test_encode_and_thunk_share_memo(self, repo):
        t = _thunk(repo)
        enc = retag(t, encode=EncodeStyle.STRICT)
        repo.memo_put(enc, EncodeStyle.STRICT, blob_handle(b"r"))
        assert repo.memo_get(t, EncodeStyle.STRICT) == blob_handle(b"r")

    def test_strict_results_must_be_forced_objects(self, repo):
        t = _thunk(repo)
        with pytest.raises(Exception):
            repo.memo_put(t, EncodeStyle.STRICT,
                          retag(blob_handle(b"r"), access=Access.REF))
        with pytest.raises(Exception):
            repo.memo_put(t, EncodeStyle.STRICT, _thunk(repo, b"other"))


class TestPersistence:
    def _populate(self, repo):
        repo.put(Blob(b"ninety" * 30))
        child = repo.put(Blob(b"c" * 31))
        repo.put(Tree((child, blob_handle(b"lit"))))
        t = _thunk(repo)
        repo.memo_put(t, EncodeStyle.STRICT, blob_handle(b"r"))
        repo.memo_put(t, EncodeStyle.SHALLOW,
                      retag(blob_handle(b"r"), access=Access.REF))
        return t

    def test_save_load_round_trip(self, repo, tmp_path):
        t = self._populate(repo)
        repo.save(str(tmp_path))
        again = Repository.load(str(tmp_path))
        for h, obj in repo.objects():
            assert again.get(h) == obj
        for thunk, style, result in repo.results():
            assert again.memo_get(thunk, style) == result
        assert again.memo_get(t, EncodeStyle.STRICT) == blob_handle(b"r")

    def test_tampered_object_detected(self, repo, tmp_path):
        self._populate(repo)
        repo.save(str(tmp_path))
        objdir = tmp_path / "objects"
        victim = sorted(objdir.iterdir())[0]
        victim.write_bytes(b"corruption!" * 4)
        with pytest.raises(CorruptionError) as info:
            Repository.load(str(tmp_path))
        assert victim.name in str(info.value)

    def test_empty_dir_empty_repository(self, tmp_path):
        repo = Repository.load(str(tmp_path))
        assert repo.object_count() == 0

    def test_save_twice_stable(self, repo, tmp_path):
        self._populate(repo)
        repo.save(str(tmp_path))
        first = sorted(p.name for p in (tmp_path / "objects").iterdir())
        repo.save(str(tmp_path))
        assert sorted(p.name for p in (tmp_path / "objects").iterdir()) == first


def test_memo_replay_matches_fresh_evaluation(registry):
    # Every recorded (thunk, style) -> result entry must agree with what a
    # fresh evaluation of the same thunk computes.
    from fixrt.procapi import name_blob
    from fixrt.runtime import Counters, Runtime
    from fixrt.semantics import (
        EvalContext,
        ResourceLimits,
        application_thunk,
        eval_shallow,
        eval_strict,
    )

    recorded = Repository()
    rl = recorded.put(Blob(ResourceLimits().to_blob()))
    thunk = application_thunk(
        recorded,
        recorded.put(Tree((rl, name_blob(recorded, "fib"),
                           name_blob(recorded, "add"),
                           recorded.put(Blob((9).to_bytes(8, "little")))))))
    rt = Runtime(recorded, registry, workers=2)
    rt.eval(thunk, EncodeStyle.STRICT, timeout=30)
    rt.eval(thunk, EncodeStyle.SHALLOW, timeout=30)
    rt.shutdown()

    fresh = Repository()
    for h, obj in recorded.objects():
        fresh.put(obj)
    ctx = EvalContext(fresh, registry, Counters())
    for t, style, want in recorded.results():
        if style == EncodeStyle.STRICT:
            got = eval_strict(ctx, t)
        else:
            got = eval_shallow(ctx, t)
        assert got == want


def test_serialize_round_trip():
    b = Blob(b"some bytes")
    assert deserialize(blob_handle(b"x").kind, serialize(b)) == b
    t = Tree((blob_handle(b"a"), blob_handle(b"b" * 31)))
    assert deserialize(tree_handle(t.children).kind, serialize(t)) == t


@given(st.binary(min_size=0, max_size=200))
@settings(max_examples=80, deadline=None)
def test_blob_storage_round_trip(data):
    repo = Repository()
    h = repo.put(Blob(data))
    assert repo.get(h).data == data
    assert object_handle(Blob(data)) == h
