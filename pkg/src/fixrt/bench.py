"""Benchmark harness: program builders, oracles, and report plumbing.

Every benchmark validates its numeric answer against an independent oracle
before reporting timing; a report is never produced for a wrong answer
(OracleMismatch instead). Corpora are generated deterministically from a
seed so reports are reproducible.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bptree import build_bptree, generate_keys, lookup_thunk, value_for
from .errors import FixError
from .handle import Handle
from .net import Node
from .procapi import decode_uint, default_registry, encode_u64, name_blob
from .runtime import Counters, Runtime
from .semantics import (
    EvalContext,
    ResourceLimits,
    application_thunk,
    eval_strict,
    strict_encode,
)
from .store import Blob, Repository, Tree


class OracleMismatch(FixError):
    """A benchmark's computed answer disagrees with its oracle."""


@dataclass
class BenchmarkReport:
    name: str
    params: dict
    wall_seconds: float
    verified: bool
    node_counters: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"bench={self.name}"]
        for k in sorted(self.params):
            out.append(f"param.{k}={self.params[k]}")
        out.append(f"verified={str(self.verified).lower()}")
        out.append(f"wall_s={self.wall_seconds:.6f}")
        for k in sorted(self.derived):
            out.append(f"derived.{k}={self.derived[k]}")
        for label in sorted(self.node_counters):
            for k in sorted(self.node_counters[label]):
                out.append(f"node.{label}.{k}={self.node_counters[label][k]}")
        return out

    def summary_json(self) -> str:
        return json.dumps(
            {
                "bench": self.name,
                "params": self.params,
                "verified": self.verified,
                "wall_s": self.wall_seconds,
                "derived": self.derived,
                "nodes": self.node_counters,
            },
            sort_keys=True,
        )

    def render(self) -> str:
        return "\n".join(self.lines() + ["--- summary ---", self.summary_json()])


def _limits_blob(repo: Repository, hint: int = 8) -> Handle:
    return repo.put(Blob(ResourceLimits(output_size_hint=hint).to_blob()))


# --- invoke ---------------------------------------------------------------------

def bench_invoke(iterations: int = 4096, seed: int = 42) -> BenchmarkReport:
    """Median/p99 dispatch overhead of a warm trivial add invocation.

    One warmup call precedes the measurement. Each timed call uses a distinct
    argument pair: because results are memoized, re-evaluating one thunk
    4096 times would measure a table lookup, not an invocation.
    """
    repo = Repository()
    registry = default_registry()
    counters = Counters()
    ctx = EvalContext(repo, registry, counters)
    rl = _limits_blob(repo)
    add = name_blob(repo, "add")

    thunks = []
    expected = []
    for i in range(iterations):
        a, b = i & 63, (i >> 6) & 63
        t = repo.put(Tree((rl, add, repo.put(Blob(bytes([a]))),
                           repo.put(Blob(bytes([b]))))))
        thunks.append(application_thunk(repo, t))
        expected.append(a + b)

    warm = repo.put(Tree((rl, add, repo.put(Blob(b"\x02")), repo.put(Blob(b"\x03")))))
    eval_strict(ctx, application_thunk(repo, warm))

    samples = []
    t_start = time.perf_counter()
    for t in thunks:
        t0 = time.perf_counter_ns()
        eval_strict(ctx, t)
        samples.append(time.perf_counter_ns() - t0)
    wall = time.perf_counter() - t_start

    for t, want in zip(thunks, expected):
        got = decode_uint(repo.get(eval_strict(ctx, t)).data)
        if got != want:
            raise OracleMismatch(f"add returned {got}, expected {want}")

    samples.sort()
    median_us = samples[len(samples) // 2] / 1000
    p99_us = samples[int(len(samples) * 0.99)] / 1000
    return BenchmarkReport(
        "invoke",
        {"iterations": iterations, "seed": seed},
        wall,
        True,
        {"local": counters.snapshot()},
        {
            "median_us": round(median_us, 3),
            "p99_us": round(p99_us, 3),
            "mean_us": round(statistics.fmean(samples) / 1000, 3),
        },
    )


# --- chain ----------------------------------------------------------------------

def build_chain(repo: Repository, n: int) -> Handle:
    """n nested increments of zero; strict value is n."""
    rl = _limits_blob(repo)
    inc = name_blob(repo, "increment")
    thunk = application_thunk(
        repo, repo.put(Tree((rl, inc, repo.put(Blob(encode_u64(0)))))))
    for _ in range(n - 1):
        thunk = application_thunk(
            repo, repo.put(Tree((rl, inc, strict_encode(thunk)))))
    return thunk


def bench_chain(n: int = 500, server: Optional[Node] = None,
                client: Optional[Node] = None, workers: Optional[int] = None,
                seed: int = 42) -> BenchmarkReport:
    """Evaluate an n-deep increment chain, locally or on a remote node."""
    if (server is None) != (client is None):
        raise ValueError("chain needs either both nodes or neither")
    if server is not None:
        repo = client.repo
        thunk = build_chain(repo, n)
        t0 = time.perf_counter()
        result = client.eval(thunk, timeout=max(60, n))
        wall = time.perf_counter() - t0
        counters = {"client": client.stats(), "server": server.stats()}
    else:
        repo = Repository()
        runtime = Runtime(repo, default_registry(), workers=workers)
        thunk = build_chain(repo, n)
        t0 = time.perf_counter()
        result = runtime.eval(thunk, timeout=max(60, n))
        wall = time.perf_counter() - t0
        counters = {"local": runtime.stats()}
        runtime.shutdown()

    got = decode_uint(repo.get(result).data)
    if got != n:
        raise OracleMismatch(f"chain of {n} yielded {got}")
    derived = {"final_value": got, "per_link_us": round(wall * 1e6 / n, 3)}
    if server is not None:
        cs = counters["client"]
        derived["client_delegates_sent"] = cs.get("sent_delegate", 0)
        derived["client_results_received"] = cs.get("recv_result", 0)
    return BenchmarkReport("chain", {"n": n, "remote": server is not None,
                                     "seed": seed},
                           wall, True, counters, derived)


# --- fib ------------------------------------------------------------------------

def _fib_oracle(n: int) -> int:
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def bench_fib(n: int = 10, workers: Optional[int] = None, seed: int = 42) -> BenchmarkReport:
    repo = Repository()
    runtime = Runtime(repo, default_registry(), workers=workers)
    rl = _limits_blob(repo)
    t = repo.put(Tree((rl, name_blob(repo, "fib"), name_blob(repo, "add"),
                       repo.put(Blob(encode_u64(n))))))
    thunk = application_thunk(repo, t)
    t0 = time.perf_counter()
    result = runtime.eval(thunk, timeout=120)
    wall = time.perf_counter() - t0
    got = decode_uint(repo.get(result).data)
    want = _fib_oracle(n)
    counters = runtime.stats()
    runtime.shutdown()
    if got != want:
        raise OracleMismatch(f"fib({n}) yielded {got}, expected {want}")
    return BenchmarkReport("fib", {"n": n, "seed": seed}, wall, True,
                           {"local": counters},
                           {"value": got,
                            "guest_invocations": counters["guest_invocations"]})


# --- bptree -----------------------------------------------------------------------

def bench_bptree(arity: int = 64, entries: int = 100_000, queries: int = 10,
                 workers: Optional[int] = None, seed: int = 42) -> BenchmarkReport:
    repo = Repository()
    registry = default_registry()
    keys = generate_keys(entries, seed)
    tree = build_bptree(repo, keys, arity)
    runtime = Runtime(repo, registry, workers=workers)

    import random as _random
    rng = _random.Random(seed + 1)
    query_keys = rng.sample(keys, queries)

    per_query_invocations = []
    per_query_attached = []
    t0 = time.perf_counter()
    for key in query_keys:
        before_inv = runtime.counters.get("guest_invocations")
        before_att = runtime.counters.get("bytes_attached")
        result = runtime.eval(lookup_thunk(repo, tree, key), timeout=60)
        per_query_invocations.append(
            runtime.counters.get("guest_invocations") - before_inv)
        per_query_attached.append(
            runtime.counters.get("bytes_attached") - before_att)
        got = repo.get(result).data
        if got != value_for(key):
            runtime.shutdown()
            raise OracleMismatch(f"lookup of {key!r} yielded {got!r}")
    wall = time.perf_counter() - t0

    counters = runtime.stats()
    runtime.shutdown()
    if any(iv != tree.depth for iv in per_query_invocations):
        raise OracleMismatch(
            f"invocations per query {per_query_invocations}, tree depth {tree.depth}"
        )
    max_key = max(len(k) for k in keys)
    bound = arity * tree.depth * (max_key + 32)
    if max(per_query_attached) > 2 * bound:
        raise OracleMismatch(
            f"attached {max(per_query_attached)} bytes per query exceeds "
            f"2x the a*d*(key+handle) bound {bound}"
        )
    return BenchmarkReport(
        "bptree",
        {"arity": arity, "entries": entries, "queries": queries, "seed": seed},
        wall,
        True,
        {"local": counters},
        {
            "depth": tree.depth,
            "invocations_per_query": tree.depth,
            "bytes_attached_per_query": max(per_query_attached),
            "attach_bound_bytes": bound,
            "per_query_ms": round(wall * 1000 / queries, 3),
        },
    )


# --- count / locality ----------------------------------------------------------------

def generate_corpus(shards: int, shard_bytes: int, seed: int) -> list[bytes]:
    """Deterministic lowercase-ASCII shards."""
    rng = np.random.default_rng(seed)
    return [
        rng.integers(97, 123, shard_bytes, dtype=np.uint8).tobytes()
        for _ in range(shards)
    ]


def count_oracle(corpus: list[bytes], needle: bytes) -> int:
    """Single-pass scan, non-overlapping within each shard."""
    return sum(shard.count(needle) for shard in corpus)


def build_count_program(repo: Repository, shard_handles: list[Handle],
                        needle: bytes) -> Handle:
    rl = _limits_blob(repo)
    count_fn = name_blob(repo, "count_string")
    merge_fn = name_blob(repo, "merge_counts")
    needle_h = repo.put(Blob(needle))
    level = [
        application_thunk(repo, repo.put(Tree((rl, count_fn, sh, needle_h))))
        for sh in shard_handles
    ]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            t = repo.put(Tree((rl, merge_fn, strict_encode(level[i]),
                               strict_encode(level[i + 1]))))
            nxt.append(application_thunk(repo, t))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def bench_count(shards: int = 64, shard_mib: int = 1, needle: str = "abc",
                workers: Optional[int] = None, seed: int = 42) -> BenchmarkReport:
    corpus = generate_corpus(shards, shard_mib << 20, seed)
    needle_b = needle.encode()
    expected = count_oracle(corpus, needle_b)

    repo = Repository()
    shard_handles = [repo.put(Blob(s)) for s in corpus]
    program = build_count_program(repo, shard_handles, needle_b)
    runtime = Runtime(repo, default_registry(), workers=workers)
    t0 = time.perf_counter()
    result = runtime.eval(program, timeout=300)
    wall = time.perf_counter() - t0
    got = decode_uint(repo.get(result).data)
    counters = runtime.stats()
    runtime.shutdown()
    if got != expected:
        raise OracleMismatch(f"count yielded {got}, oracle says {expected}")
    return BenchmarkReport(
        "count",
        {"shards": shards, "shard_mib": shard_mib, "needle": needle, "seed": seed},
        wall, True, {"local": counters},
        {"count": got, "guest_invocations": counters["guest_invocations"]},
    )


def _run_count_two_nodes(corpus: list[bytes], needle: bytes, scheduler: str,
                         seed: int, workers: int = 2) -> tuple[int, dict]:
    """Two nodes, shards split evenly, program submitted on node A."""
    repo_a = Repository()
    repo_b = Repository()
    half = len(corpus) // 2
    shard_handles = []
    for i, shard in enumerate(corpus):
        target = repo_a if i < half else repo_b
        shard_handles.append(target.put(Blob(shard)))

    node_a = Node(repo_a, default_registry(), node_id=1, workers=workers,
                  scheduler=scheduler, seed=seed)
    node_b = Node(repo_b, default_registry(), node_id=2, workers=workers,
                  scheduler=scheduler, seed=seed)
    try:
        node_a.connect(node_b.address)
        program = build_count_program(repo_a, shard_handles, needle)
        t0 = time.perf_counter()
        result = node_a.eval(program, timeout=600)
        wall = time.perf_counter() - t0
        got = decode_uint(repo_a.get(result).data)
        stats = {
            "a": node_a.stats(),
            "b": node_b.stats(),
        }
        stats["wall_s"] = wall
        return got, stats
    finally:
        node_a.stop()
        node_b.stop()


def bench_locality(shards: int = 64, shard_mib: int = 1, needle: str = "abc",
                   workers: int = 2, seed: int = 42) -> BenchmarkReport:
    """Cross-node traffic of the locality scheduler vs random placement."""
    corpus = generate_corpus(shards, shard_mib << 20, seed)
    needle_b = needle.encode()
    expected = count_oracle(corpus, needle_b)

    t0 = time.perf_counter()
    got_loc, stats_loc = _run_count_two_nodes(corpus, needle_b, "locality", seed, workers)
    got_rand, stats_rand = _run_count_two_nodes(corpus, needle_b, "random", seed, workers)
    wall = time.perf_counter() - t0

    if got_loc != expected or got_rand != expected:
        raise OracleMismatch(
            f"locality={got_loc} random={got_rand}, oracle says {expected}"
        )

    def cross_bytes(stats: dict) -> int:
        return stats["a"].get("bytes_network", 0) + stats["b"].get("bytes_network", 0)

    loc_bytes = cross_bytes(stats_loc)
    rand_bytes = cross_bytes(stats_rand)
    return BenchmarkReport(
        "locality",
        {"shards": shards, "shard_mib": shard_mib, "needle": needle,
         "workers": workers, "seed": seed},
        wall,
        True,
        {
            "locality_a": stats_loc["a"], "locality_b": stats_loc["b"],
            "random_a": stats_rand["a"], "random_b": stats_rand["b"],
        },
        {
            "count": got_loc,
            "locality_bytes": loc_bytes,
            "random_bytes": rand_bytes,
            "traffic_ratio": round(loc_bytes / rand_bytes, 6) if rand_bytes else None,
            "locality_wall_s": round(stats_loc["wall_s"], 3),
            "random_wall_s": round(stats_rand["wall_s"], 3),
        },
    )


BENCHMARKS = {
    "invoke": bench_invoke,
    "chain": bench_chain,
    "fib": bench_fib,
    "bptree": bench_bptree,
    "count": bench_count,
    "locality": bench_locality,
}
