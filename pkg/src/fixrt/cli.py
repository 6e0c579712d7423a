"""The `fix` command line: repository management, evaluation, nodes, benchmarks.

Machine-facing output goes to stdout, diagnostics to stderr. Exit codes:
0 success, 1 usage/environment errors, 2 evaluation failure (the failing
thunk's handle is printed to stderr), 3 benchmark oracle mismatch.

The repository directory comes from --repo, else $FIX_REPO, else ./.fix.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading

from .bench import (
    BENCHMARKS,
    OracleMismatch,
    bench_bptree,
    bench_chain,
    bench_count,
    bench_fib,
    bench_invoke,
    bench_locality,
)
from .errors import EvaluationFailure, FixError, NotFoundError
from .handle import EncodeStyle, Handle
from .net import Node, query_stats
from .procapi import default_registry
from .runtime import Runtime
from .store import Blob, Repository, Tree

REPO_ENV = "FIX_REPO"


def _repo_dir(args) -> str:
    return args.repo or os.environ.get(REPO_ENV) or ".fix"


def _load_repo(args) -> Repository:
    path = _repo_dir(args)
    if not os.path.isdir(path):
        print(f"fix: repository {path!r} does not exist (run `fix init {path}`)",
              file=sys.stderr)
        raise SystemExit(1)
    return Repository.load(path)


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"address must be host:port, got {text!r}")
    return host, int(port)


def _cmd_init(args) -> int:
    path = args.dir
    os.makedirs(os.path.join(path, "objects"), exist_ok=True)
    idx = os.path.join(path, "results.idx")
    if not os.path.exists(idx):
        open(idx, "w").close()
    print(path)
    return 0


def _cmd_add(args) -> int:
    repo = _load_repo(args)
    with open(args.file, "rb") as f:
        data = f.read()
    h = repo.put(Blob(data))
    repo.save(_repo_dir(args))
    print(h.hex())
    return 0


def _cmd_tree(args) -> int:
    repo = _load_repo(args)
    children = tuple(Handle.from_hex(t) for t in args.handle)
    h = repo.put(Tree(children))
    repo.save(_repo_dir(args))
    print(h.hex())
    return 0


def _cmd_cat(args) -> int:
    repo = _load_repo(args)
    h = Handle.from_hex(args.handle)
    runtime = Runtime(repo, default_registry(), workers=args.workers)
    try:
        result = runtime.eval(h, EncodeStyle.STRICT, timeout=args.timeout)
        obj = repo.get(result)
    except EvaluationFailure as e:
        print(f"fix: evaluation failed at {e.thunk.hex()}: {e.cause}", file=sys.stderr)
        return 2
    except (NotFoundError, FixError) as e:
        print(f"fix: {e}", file=sys.stderr)
        return 1
    finally:
        runtime.shutdown()
    if isinstance(obj, Blob):
        sys.stdout.buffer.write(obj.data)
        sys.stdout.buffer.flush()
    else:
        for child in obj.children:
            print(child.hex())
    repo.save(_repo_dir(args))
    return 0


def _cmd_eval(args) -> int:
    repo = _load_repo(args)
    h = Handle.from_hex(args.handle)
    style = EncodeStyle.SHALLOW if args.shallow else EncodeStyle.STRICT
    node = None
    runtime = None
    try:
        if args.peers:
            node = Node(repo, default_registry(), workers=args.workers)
            for addr in args.peers.split(","):
                node.connect(_parse_addr(addr))
            engine = node
        else:
            runtime = Runtime(repo, default_registry(), workers=args.workers)
            engine = runtime
        try:
            result = engine.eval(h, style, timeout=args.timeout)
        except EvaluationFailure as e:
            print(f"fix: evaluation failed at {e.thunk.hex()}: {e.cause}",
                  file=sys.stderr)
            return 2
        except FixError as e:
            print(f"fix: {e}", file=sys.stderr)
            return 2
        print(result.hex())
        if args.print:
            obj = repo.get(result) if repo.contains(result) else None
            if isinstance(obj, Blob):
                print(obj.data.hex())
        repo.save(_repo_dir(args))
        return 0
    finally:
        if node is not None:
            node.stop()
        if runtime is not None:
            runtime.shutdown()


def _cmd_serve(args) -> int:
    repo = _load_repo(args)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        node = Node(repo, default_registry(), listen=_parse_addr(args.listen),
                    workers=args.workers, node_id=args.node_id)
    except OSError as e:
        print(f"fix: cannot listen on {args.listen}: {e}", file=sys.stderr)
        return 1
    for addr in (args.peers.split(",") if args.peers else []):
        try:
            node.connect(_parse_addr(addr))
        except FixError as e:
            print(f"fix: peer {addr}: {e}", file=sys.stderr)
    host, port = node.address
    print(f"listening on {host}:{port} node-id {node.node_id:x}", file=sys.stderr)
    stop.wait()
    node.stop()
    repo.save(_repo_dir(args))
    print("saved repository, bye", file=sys.stderr)
    return 0


def _cmd_stats(args) -> int:
    try:
        values = query_stats(_parse_addr(args.addr), timeout=args.timeout)
    except (FixError, OSError) as e:
        print(f"fix: {e}", file=sys.stderr)
        return 1
    for key in sorted(values):
        print(f"{key}={values[key]}")
    return 0


def _cmd_bench(args) -> int:
    name = args.name
    if name not in BENCHMARKS:
        print(f"fix: unknown benchmark {name!r} (have: {', '.join(sorted(BENCHMARKS))})",
              file=sys.stderr)
        return 1
    try:
        if name == "invoke":
            report = bench_invoke(iterations=args.n or 4096, seed=args.seed)
        elif name == "chain":
            report = bench_chain(n=args.n or 500, workers=args.workers, seed=args.seed)
        elif name == "fib":
            report = bench_fib(n=args.n or 10, workers=args.workers, seed=args.seed)
        elif name == "bptree":
            report = bench_bptree(arity=args.arity, entries=args.entries,
                                  queries=args.queries, workers=args.workers,
                                  seed=args.seed)
        elif name == "count":
            report = bench_count(shards=args.shards, shard_mib=args.shard_mib,
                                 needle=args.needle, workers=args.workers,
                                 seed=args.seed)
        else:
            report = bench_locality(shards=args.shards, shard_mib=args.shard_mib,
                                    needle=args.needle, workers=args.workers or 2,
                                    seed=args.seed)
    except OracleMismatch as e:
        print(f"fix: benchmark answer wrong: {e}", file=sys.stderr)
        return 3
    print(report.render())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fix", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repo", "-r", help=f"repository directory (default ${REPO_ENV} or ./.fix)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("init", help="create a repository directory")
    sp.add_argument("dir")
    sp.set_defaults(fn=_cmd_init)

    sp = sub.add_parser("add", help="store a file as a blob, print its handle")
    sp.add_argument("file")
    sp.set_defaults(fn=_cmd_add)

    sp = sub.add_parser("tree", help="store a tree of existing handles")
    sp.add_argument("handle", nargs="+")
    sp.set_defaults(fn=_cmd_tree)

    sp = sub.add_parser("cat", help="strict-evaluate, print blob bytes or tree children")
    sp.add_argument("handle")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.set_defaults(fn=_cmd_cat)

    sp = sub.add_parser("eval", help="evaluate a handle, print the result handle")
    sp.add_argument("handle")
    sp.add_argument("--shallow", action="store_true")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--peers", help="comma-separated host:port list")
    sp.add_argument("--print", action="store_true", help="also print blob value hex")
    sp.add_argument("--timeout", type=float, default=300.0)
    sp.set_defaults(fn=_cmd_eval)

    sp = sub.add_parser("serve", help="run a node until interrupted")
    sp.add_argument("--listen", required=True, help="host:port")
    sp.add_argument("--peers")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--node-id", type=lambda s: int(s, 0), default=None)
    sp.set_defaults(fn=_cmd_serve)

    sp = sub.add_parser("stats", help="query a serving node's counters")
    sp.add_argument("addr", help="host:port")
    sp.add_argument("--timeout", type=float, default=10.0)
    sp.set_defaults(fn=_cmd_stats)

    sp = sub.add_parser("bench", help="run a named benchmark")
    sp.add_argument("name", choices=sorted(BENCHMARKS))
    sp.add_argument("--n", type=int, help="iterations / chain length / fib n")
    sp.add_argument("--arity", type=int, default=64)
    sp.add_argument("--entries", type=int, default=100_000)
    sp.add_argument("--queries", type=int, default=10)
    sp.add_argument("--shards", type=int, default=64)
    sp.add_argument("--shard-mib", type=int, default=1)
    sp.add_argument("--needle", default="abc")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--seed", type=int, default=42)
    sp.set_defaults(fn=_cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FixError as e:
        print(f"fix: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"fix: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
