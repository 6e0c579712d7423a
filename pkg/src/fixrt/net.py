"""Multi-node execution: wire protocol, per-peer views, locality placement.

Frames are `u32 big-endian length | u8 type | body`, where the length counts
the type byte plus the body. Handles travel as their canonical 32 bytes;
object payloads are canonical serializations whose recomputed handle must
match the claimed one before anything enters a repository.

Every node runs one network worker thread that owns all sockets and the
views. Runtime worker threads hand it work through an action queue and a
wakeup pipe; it hands results back through the runtime's public surface.

A view is the set of handles a peer is believed to hold. It is advanced
passively: from HELLO inventories, from payloads the peer sent us, and from
payloads we sent the peer. Views are a placement cost model, never a
correctness source; a stale view costs transfers, not answers.
"""

from __future__ import annotations

import os
import selectors
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from .errors import EvaluationFailure, NotFoundError, ProtocolError
from .handle import (
    Access,
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    as_object,
    storage_key,
)
from .runtime import Counters, JobState, Runtime
from .semantics import ResourceLimits, strip_encode
from .store import Repository, Tree, deserialize, object_handle, serialize

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 29  # hard parse guard


class MessageType(IntEnum):
    HELLO = 1
    PUSH = 2
    PROPOSE = 3
    REQUEST = 4
    DELEGATE = 5
    RESULT = 6
    NOT_FOUND = 7
    FAILURE = 8
    STATS_REQUEST = 9
    STATS_REPLY = 10


@dataclass(frozen=True)
class Hello:
    node_id: int
    inventory: tuple[Handle, ...]
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Push:
    handle: Handle
    payload: bytes


@dataclass(frozen=True)
class Propose:
    handles: tuple[Handle, ...]


@dataclass(frozen=True)
class Request:
    handle: Handle


@dataclass(frozen=True)
class NotFoundMsg:
    handle: Handle


@dataclass(frozen=True)
class Delegate:
    job: Handle
    style: EncodeStyle
    bundle: tuple[tuple[Handle, bytes], ...]


@dataclass(frozen=True)
class ResultMsg:
    job: Handle
    style: EncodeStyle
    result: Handle
    bundle: tuple[tuple[Handle, bytes], ...]


@dataclass(frozen=True)
class FailureMsg:
    job: Handle
    style: EncodeStyle
    message: str


@dataclass(frozen=True)
class StatsRequest:
    pass


@dataclass(frozen=True)
class StatsReply:
    values: dict


# --- encoding ------------------------------------------------------------------

def _frame(msg_type: MessageType, body: bytes) -> bytes:
    return struct.pack(">IB", 1 + len(body), msg_type) + body


def _encode_bundle(bundle) -> bytes:
    parts = [struct.pack(">I", len(bundle))]
    for handle, payload in bundle:
        parts.append(handle.raw)
        parts.append(struct.pack(">Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def encode_message(msg) -> bytes:
    if isinstance(msg, Hello):
        body = bytes([msg.version]) + struct.pack(">Q", msg.node_id)
        body += struct.pack(">I", len(msg.inventory))
        body += b"".join(h.raw for h in msg.inventory)
        return _frame(MessageType.HELLO, body)
    if isinstance(msg, Push):
        return _frame(MessageType.PUSH, msg.handle.raw + msg.payload)
    if isinstance(msg, Propose):
        body = struct.pack(">I", len(msg.handles)) + b"".join(h.raw for h in msg.handles)
        return _frame(MessageType.PROPOSE, body)
    if isinstance(msg, Request):
        return _frame(MessageType.REQUEST, msg.handle.raw)
    if isinstance(msg, NotFoundMsg):
        return _frame(MessageType.NOT_FOUND, msg.handle.raw)
    if isinstance(msg, Delegate):
        body = msg.job.raw + bytes([msg.style]) + _encode_bundle(msg.bundle)
        return _frame(MessageType.DELEGATE, body)
    if isinstance(msg, ResultMsg):
        body = msg.job.raw + bytes([msg.style]) + msg.result.raw
        body += _encode_bundle(msg.bundle)
        return _frame(MessageType.RESULT, body)
    if isinstance(msg, FailureMsg):
        text = msg.message.encode("utf-8")
        body = msg.job.raw + bytes([msg.style]) + struct.pack(">I", len(text)) + text
        return _frame(MessageType.FAILURE, body)
    if isinstance(msg, StatsRequest):
        return _frame(MessageType.STATS_REQUEST, b"")
    if isinstance(msg, StatsReply):
        parts = [struct.pack(">I", len(msg.values))]
        for key in sorted(msg.values):
            kb = key.encode("utf-8")
            parts.append(struct.pack(">H", len(kb)))
            parts.append(kb)
            parts.append(struct.pack(">Q", int(msg.values[key])))
        return _frame(MessageType.STATS_REPLY, b"".join(parts))
    raise TypeError(f"cannot encode {type(msg).__name__}")


# --- decoding ------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ProtocolError("truncated message")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def handle(self) -> Handle:
        try:
            return Handle.from_bytes(self.take(32))
        except Exception as e:
            raise ProtocolError(f"bad handle on wire: {e}") from None

    def style(self) -> EncodeStyle:
        v = self.u8()
        if v not in (EncodeStyle.STRICT, EncodeStyle.SHALLOW):
            raise ProtocolError(f"bad evaluation style {v}")
        return EncodeStyle(v)

    def rest(self) -> bytes:
        out = self.data[self.off :]
        self.off = len(self.data)
        return out

    def done(self) -> None:
        if self.off != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.off} trailing bytes")


def _decode_bundle(r: _Reader):
    count = r.u32()
    bundle = []
    for _ in range(count):
        h = r.handle()
        n = r.u64()
        if n > MAX_FRAME:
            raise ProtocolError(f"bundle payload of {n} bytes")
        bundle.append((h, r.take(n)))
    return tuple(bundle)


def decode_message(data: bytes):
    if not data:
        raise ProtocolError("empty frame")
    try:
        mtype = MessageType(data[0])
    except ValueError:
        raise ProtocolError(f"unknown message type {data[0]}") from None
    r = _Reader(data[1:])
    if mtype == MessageType.HELLO:
        version = r.u8()
        node_id = r.u64()
        inventory = tuple(r.handle() for _ in range(r.u32()))
        r.done()
        return Hello(node_id, inventory, version)
    if mtype == MessageType.PUSH:
        return Push(r.handle(), r.rest())
    if mtype == MessageType.PROPOSE:
        handles = tuple(r.handle() for _ in range(r.u32()))
        r.done()
        return Propose(handles)
    if mtype == MessageType.REQUEST:
        h = r.handle()
        r.done()
        return Request(h)
    if mtype == MessageType.NOT_FOUND:
        h = r.handle()
        r.done()
        return NotFoundMsg(h)
    if mtype == MessageType.DELEGATE:
        job = r.handle()
        style = r.style()
        bundle = _decode_bundle(r)
        r.done()
        return Delegate(job, style, bundle)
    if mtype == MessageType.RESULT:
        job = r.handle()
        style = r.style()
        result = r.handle()
        bundle = _decode_bundle(r)
        r.done()
        return ResultMsg(job, style, result, bundle)
    if mtype == MessageType.FAILURE:
        job = r.handle()
        style = r.style()
        message = r.take(r.u32()).decode("utf-8", "replace")
        r.done()
        return FailureMsg(job, style, message)
    if mtype == MessageType.STATS_REQUEST:
        r.done()
        return StatsRequest()
    if mtype == MessageType.STATS_REPLY:
        values = {}
        for _ in range(r.u32()):
            key = r.take(r.u16()).decode("utf-8")
            values[key] = r.u64()
        r.done()
        return StatsReply(values)
    raise ProtocolError(f"unhandled message type {mtype}")


def _verify_payload(claimed: Handle, payload: bytes):
    """Deserialize and hash-check a wire payload against its claimed handle."""
    obj = deserialize(claimed.kind, payload)
    actual = object_handle(obj)
    if actual != as_object(claimed):
        raise ProtocolError(
            f"payload hashes to {actual.hex()}, claimed {as_object(claimed).hex()}"
        )
    return obj


# --- views and placement ---------------------------------------------------------

class NodeView:
    """Handles believed present at one peer. Monotone; a heuristic only."""

    def __init__(self, peer_id: int):
        self.peer_id = peer_id
        self.keys: set[bytes] = set()
        self.seq = 0

    def add_handle(self, h: Handle) -> None:
        if not h.literal:
            self.keys.add(storage_key(h))
            self.seq += 1

    def contains(self, key: bytes) -> bool:
        return key in self.keys


def definition_closure(repo: Repository, root: Handle):
    """Everything needed to evaluate `root`'s definition without roundtrips.

    Walks object and thunk-definition edges, stopping at Refs (their data is
    deliberately not part of a definition) and skipping literals (they are
    self-contained in the handle). Objects absent locally are skipped; the
    receiver may already hold them or will fetch them.
    """
    out = []
    seen: set[bytes] = set()
    stack = [root]
    while stack:
        h = stack.pop()
        if h.literal:
            continue
        if h.laziness == Laziness.VALUE and h.access == Access.REF:
            continue
        key = storage_key(h)
        if key in seen:
            continue
        seen.add(key)
        if not repo.contains(h):
            continue
        obj = repo.get(h)
        out.append((Handle.from_bytes(key), serialize(obj)))
        if isinstance(obj, Tree):
            stack.extend(obj.children)
    return out


def _data_nbytes(h: Handle) -> int:
    return 32 * h.size if h.kind == Kind.TREE else h.size


def output_hint(repo: Repository, thunk: Handle) -> int:
    """The output-size hint from an application thunk's resource blob."""
    if thunk.laziness != Laziness.APPLICATION:
        return 0
    try:
        defn = repo.get(as_object(thunk))
        if not isinstance(defn, Tree) or not len(defn):
            return 0
        rl = defn[0]
        if rl.kind != Kind.BLOB or rl.laziness != Laziness.VALUE:
            return 0
        return ResourceLimits.from_blob(repo.get(rl).data).output_size_hint
    except Exception:
        return 0


def dependency_footprint(repo: Repository, thunk: Handle):
    """(key → byte size) of the data this job needs, plus a constant term.

    Objects in the definition closure are weighted by their own size. A
    memoized sub-encode contributes its result; an unresolved one contributes
    its hinted output size as a location-independent constant (where the
    result will materialize is not yet known).
    """
    sizes: dict[bytes, int] = {}
    constant = 0
    try:
        stack = [as_object(thunk)]
    except Exception:
        return sizes, constant
    seen: set[bytes] = set()
    while stack:
        h = stack.pop()
        if h.literal:
            continue
        if h.encode != EncodeStyle.NONE:
            inner = strip_encode(h)
            hit = repo.memo_get(inner, EncodeStyle(h.encode))
            if hit is not None and not hit.literal:
                sizes[storage_key(hit)] = _data_nbytes(hit)
            elif hit is None:
                constant += output_hint(repo, inner)
            continue
        if h.laziness != Laziness.VALUE:
            # A bare thunk is carried, not evaluated, by this job.
            continue
        if h.access == Access.REF:
            continue
        key = storage_key(h)
        if key in seen:
            continue
        seen.add(key)
        sizes[key] = _data_nbytes(h)
        if h.kind == Kind.TREE and repo.contains(h):
            stack.extend(repo.get(h).children)
    return sizes, constant


def place(repo: Repository, views: dict, thunk: Handle, *,
          local_ok: bool = True, sibling_ordinal: Optional[int] = None,
          local_id: int = -1) -> Optional[int]:
    """Pick the node needing minimal data movement; None means run locally.

    Ties: a sibling job round-robins by its ordinal across the tied nodes;
    otherwise prefer local, then the lowest node id.
    """
    sizes, constant = dependency_footprint(repo, thunk)
    hint = output_hint(repo, thunk)
    costs: list[tuple[int, Optional[int]]] = []
    if local_ok:
        local_cost = sum(sz for key, sz in sizes.items() if not repo.contains_key(key))
        costs.append((local_cost + constant, None))
    for peer_id, view in views.items():
        c = sum(sz for key, sz in sizes.items() if not view.contains(key))
        costs.append((c + constant + hint, peer_id))
    if not costs:
        return None
    best = min(c for c, _ in costs)
    minima = [node for c, node in costs if c == best]
    if len(minima) == 1:
        return minima[0]
    if sibling_ordinal is not None:
        ordered = sorted(minima, key=lambda n: local_id if n is None else n)
        return ordered[sibling_ordinal % len(ordered)]
    if None in minima:
        return None
    return min(minima)


# --- the node ---------------------------------------------------------------------

class _Conn:
    def __init__(self, sock: socket.socket, addr, initiated: bool):
        self.sock = sock
        self.addr = addr
        self.initiated = initiated
        self.peer_id: Optional[int] = None
        self.inbuf = bytearray()
        self.outbuf = bytearray()
        self.ready = False
        self.closing = False
        self.stats_waiters: list = []
        self.wait_id: Optional[int] = None


class Node:
    """One network-visible runtime node.

    scheduler: "locality" uses place(); "random" picks uniformly among self
    and peers (the ablation the locality benchmark compares against).
    """

    def __init__(self, repo: Repository, registry, listen=("127.0.0.1", 0),
                 node_id: Optional[int] = None, workers: Optional[int] = None,
                 counters: Optional[Counters] = None, scheduler: str = "locality",
                 seed: int = 42):
        import random as _random

        if scheduler not in ("locality", "random"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.counters = counters or Counters()
        self.repo = repo
        self.registry = registry
        self.runtime = Runtime(repo, registry, workers=workers, counters=self.counters)
        self.node_id = node_id if node_id is not None else int.from_bytes(os.urandom(8), "big") >> 1
        self.scheduler = scheduler
        self._rng = _random.Random(seed ^ self.node_id)

        self._lock = threading.Lock()
        self._conns: dict[int, _Conn] = {}       # keyed by fd
        self._peers: dict[int, _Conn] = {}       # keyed by peer id, ready only
        self._views: dict[int, NodeView] = {}
        self._actions: deque = deque()
        self._fetching: dict[bytes, dict] = {}   # key → {handle, tried, candidates}
        self._msg_counts: dict[str, int] = {}
        self._connect_waits: dict[int, dict] = {}
        self._next_wait = 1

        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(listen)
        self._listener.listen(16)
        self._listener.setblocking(False)
        self.address = self._listener.getsockname()

        self._wake_r, self._wake_w = os.pipe()
        os.set_blocking(self._wake_r, False)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, ("listen", None))
        self._sel.register(self._wake_r, selectors.EVENT_READ, ("wake", None))

        self._stop = False
        self.runtime.delegator = self
        self._thread = threading.Thread(target=self._loop, name=f"fix-net-{self.node_id:x}",
                                        daemon=True)
        self._thread.start()

    # -- public ------------------------------------------------------------------

    def connect(self, addr, timeout: float = 10.0) -> int:
        """Dial a peer, exchange HELLOs, return its node id."""
        sock = socket.create_connection(addr, timeout=timeout)
        sock.setblocking(False)
        event = threading.Event()
        state = {"event": event, "peer_id": None, "error": None}
        with self._lock:
            wait_id = self._next_wait
            self._next_wait += 1
            self._connect_waits[wait_id] = state
        self._post(lambda: self._register_conn(sock, addr, initiated=True, wait_id=wait_id))
        if not event.wait(timeout):
            raise ProtocolError(f"handshake with {addr} timed out")
        if state["error"] is not None:
            raise state["error"]
        return state["peer_id"]

    def peers(self) -> list[int]:
        with self._lock:
            return sorted(self._peers)

    def eval(self, target: Handle, style: EncodeStyle = EncodeStyle.STRICT,
             timeout: Optional[float] = None) -> Handle:
        return self.runtime.eval(target, style, timeout)

    def stats(self) -> dict:
        snap = self.runtime.stats()
        with self._lock:
            snap.update(self._msg_counts)
            snap["peers"] = len(self._peers)
        return snap

    def stop(self) -> None:
        self._post(self._shutdown_net)
        self._thread.join(timeout=5)
        self.runtime.shutdown()

    # -- delegator interface (called from runtime worker threads) ------------------

    def place(self, thunk: Handle, style: EncodeStyle,
              sibling_ordinal: Optional[int] = None) -> Optional[int]:
        with self._lock:
            views = dict(self._views)
        local_ok = self.runtime.worker_count > 0
        if not views:
            return None
        if self.scheduler == "random":
            candidates: list[Optional[int]] = sorted(views)
            if local_ok:
                candidates.append(None)
            return self._rng.choice(candidates)
        return place(self.repo, views, thunk, local_ok=local_ok,
                     sibling_ordinal=sibling_ordinal, local_id=self.node_id)

    def send_delegate(self, peer_id: int, thunk: Handle, style: EncodeStyle) -> None:
        def action():
            conn = self._peers.get(peer_id)
            if conn is None:
                self.runtime.requeue_delegated(peer_id)
                return
            view = self._views[peer_id]
            bundle = [
                (h, payload) for h, payload in definition_closure(self.repo, thunk)
                if not view.contains(h.raw)
            ]
            self._send(conn, Delegate(thunk, style, tuple(bundle)))
            for h, _ in bundle:
                view.add_handle(h)
        self._post(action)

    def request_objects(self, handles) -> None:
        def action():
            for h in handles:
                self._start_fetch(h)
        self._post(action)

    # -- net thread internals -------------------------------------------------------

    def _post(self, fn) -> None:
        with self._lock:
            self._actions.append(fn)
        try:
            os.write(self._wake_w, b"x")
        except OSError:
            pass

    def _count(self, direction: str, mtype: MessageType) -> None:
        key = f"{direction}_{mtype.name.lower()}"
        with self._lock:
            self._msg_counts[key] = self._msg_counts.get(key, 0) + 1

    def _send(self, conn: _Conn, msg) -> None:
        if conn.closing:
            return
        frame = encode_message(msg)
        conn.outbuf += frame
        self.counters.add("bytes_network", len(frame))
        self._count("sent", MessageType(frame[4]))
        self._update_writer(conn)
        self._flush(conn)

    def _update_writer(self, conn: _Conn) -> None:
        events = selectors.EVENT_READ
        if conn.outbuf:
            events |= selectors.EVENT_WRITE
        try:
            self._sel.modify(conn.sock, events, ("conn", conn))
        except (KeyError, ValueError):
            pass

    def _flush(self, conn: _Conn) -> None:
        while conn.outbuf:
            try:
                n = conn.sock.send(conn.outbuf)
            except (BlockingIOError, InterruptedError):
                break
            except OSError:
                self._drop_conn(conn, "send failed")
                return
            if n == 0:
                break
            del conn.outbuf[:n]
        self._update_writer(conn)

    def _register_conn(self, sock, addr, *, initiated: bool,
                       wait_id: Optional[int] = None) -> None:
        conn = _Conn(sock, addr, initiated)
        conn.wait_id = wait_id
        self._conns[sock.fileno()] = conn
        self._sel.register(sock, selectors.EVENT_READ, ("conn", conn))
        inventory = tuple(h for h, _ in self.repo.objects())
        self._send(conn, Hello(self.node_id, inventory))

    def _loop(self) -> None:
        while True:
            try:
                events = self._sel.select(timeout=0.5)
            except OSError:
                return
            for key, mask in events:
                tag, payload = key.data
                if tag == "wake":
                    try:
                        os.read(self._wake_r, 4096)
                    except OSError:
                        pass
                elif tag == "listen":
                    self._accept()
                elif tag == "conn":
                    if mask & selectors.EVENT_READ:
                        self._read(payload)
                    if mask & selectors.EVENT_WRITE:
                        self._flush(payload)
            while True:
                with self._lock:
                    if not self._actions:
                        break
                    fn = self._actions.popleft()
                try:
                    fn()
                except Exception:
                    pass
            if self._stop:
                return

    def _accept(self) -> None:
        while True:
            try:
                sock, addr = self._listener.accept()
            except (BlockingIOError, OSError):
                return
            sock.setblocking(False)
            self._register_conn(sock, addr, initiated=False)

    def _read(self, conn: _Conn) -> None:
        try:
            data = conn.sock.recv(1 << 20)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            self._drop_conn(conn, "recv failed")
            return
        if not data:
            self._drop_conn(conn, "peer closed")
            return
        conn.inbuf += data
        while True:
            if len(conn.inbuf) < 4:
                return
            (length,) = struct.unpack_from(">I", conn.inbuf, 0)
            if length < 1 or length > MAX_FRAME:
                self._drop_conn(conn, f"bad frame length {length}")
                return
            if len(conn.inbuf) < 4 + length:
                return
            frame = bytes(conn.inbuf[4 : 4 + length])
            del conn.inbuf[: 4 + length]
            try:
                msg = decode_message(frame)
                self._count("recv", MessageType(frame[0]))
                self._handle_message(conn, msg)
            except ProtocolError as e:
                self.counters.add("protocol_errors")
                self._drop_conn(conn, str(e))
                return

    def _drop_conn(self, conn: _Conn, reason: str) -> None:
        if conn.closing:
            return
        conn.closing = True
        try:
            self._sel.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        try:
            conn.sock.close()
        except OSError:
            pass
        self._conns.pop(conn.sock.fileno(), None)
        wait_id = getattr(conn, "wait_id", None)
        if wait_id is not None:
            self._finish_wait(wait_id, None, ProtocolError(f"connection lost: {reason}"))
        if conn.peer_id is not None:
            with self._lock:
                if self._peers.get(conn.peer_id) is conn:
                    del self._peers[conn.peer_id]
                    self._views.pop(conn.peer_id, None)
            self.runtime.requeue_delegated(conn.peer_id)
            self._retry_fetches_for(conn.peer_id)

    def _finish_wait(self, wait_id: int, peer_id, error) -> None:
        with self._lock:
            state = self._connect_waits.pop(wait_id, None)
        if state is not None:
            state["peer_id"] = peer_id
            state["error"] = error
            state["event"].set()

    # -- message handling ------------------------------------------------------------

    def _handle_message(self, conn: _Conn, msg) -> None:
        if isinstance(msg, Hello):
            self._on_hello(conn, msg)
            return
        if conn.peer_id is None:
            raise ProtocolError(f"{type(msg).__name__} before HELLO")
        handler = {
            Push: self._on_push,
            Propose: self._on_propose,
            Request: self._on_request,
            NotFoundMsg: self._on_not_found,
            Delegate: self._on_delegate,
            ResultMsg: self._on_result,
            FailureMsg: self._on_failure,
            StatsRequest: self._on_stats_request,
            StatsReply: self._on_stats_reply,
        }[type(msg)]
        handler(conn, msg)

    def _on_hello(self, conn: _Conn, msg: Hello) -> None:
        if msg.version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version {msg.version}, expected {PROTOCOL_VERSION}"
            )
        if msg.node_id == self.node_id:
            raise ProtocolError("connected to self")
        if conn.peer_id is not None:
            raise ProtocolError("second HELLO on one connection")
        with self._lock:
            if msg.node_id in self._peers:
                duplicate = True
            else:
                duplicate = False
                conn.peer_id = msg.node_id
                conn.ready = True
                self._peers[msg.node_id] = conn
                view = NodeView(msg.node_id)
                for h in msg.inventory:
                    view.add_handle(h)
                self._views[msg.node_id] = view
        if duplicate:
            # One link per peer pair; the extra connection is dropped. A
            # dialer racing an established link still gets a usable peer id.
            wait_id = getattr(conn, "wait_id", None)
            if wait_id is not None:
                conn.wait_id = None
                self._finish_wait(wait_id, msg.node_id, None)
            self._drop_conn(conn, "duplicate connection")
            return
        wait_id = getattr(conn, "wait_id", None)
        if wait_id is not None:
            conn.wait_id = None
            self._finish_wait(wait_id, msg.node_id, None)

    def _on_push(self, conn: _Conn, msg: Push) -> None:
        key = storage_key(msg.handle)
        try:
            obj = _verify_payload(msg.handle, msg.payload)
        except ProtocolError:
            # Corrupt payload: the object is discarded, the link survives.
            self.counters.add("protocol_errors")
            self._fetch_advance(key)
            return
        self.repo.put(obj)
        self.counters.add("objects_fetched")
        with self._lock:
            view = self._views.get(conn.peer_id)
            if view is not None:
                view.add_handle(msg.handle)
            self._fetching.pop(key, None)
        self.runtime.object_arrived(msg.handle)

    def _on_propose(self, conn: _Conn, msg: Propose) -> None:
        with self._lock:
            view = self._views.get(conn.peer_id)
            if view is not None:
                for h in msg.handles:
                    view.add_handle(h)

    def _on_request(self, conn: _Conn, msg: Request) -> None:
        if self.repo.contains(msg.handle):
            payload = serialize(self.repo.get(msg.handle))
            self._send(conn, Push(as_object(msg.handle), payload))
            with self._lock:
                view = self._views.get(conn.peer_id)
                if view is not None:
                    view.add_handle(msg.handle)
        else:
            self._send(conn, NotFoundMsg(msg.handle))

    def _on_not_found(self, conn: _Conn, msg: NotFoundMsg) -> None:
        key = storage_key(msg.handle)
        with self._lock:
            state = self._fetching.get(key)
            if state is not None:
                state["tried"].add(conn.peer_id)
        self._fetch_advance(key)

    def _on_delegate(self, conn: _Conn, msg: Delegate) -> None:
        peer_id = conn.peer_id
        for h, payload in msg.bundle:
            obj = _verify_payload(h, payload)  # ProtocolError drops the link
            self.repo.put(obj)
        with self._lock:
            view = self._views.get(peer_id)
            if view is not None:
                for h, _ in msg.bundle:
                    view.add_handle(h)
        jid = self.runtime.submit(msg.job, msg.style, origin=f"peer:{peer_id:x}")

        def on_done(job):
            self._post(lambda: self._reply_result(peer_id, job))

        self.runtime.add_done_callback(jid, on_done)

    def _reply_result(self, peer_id: int, job) -> None:
        conn = self._peers.get(peer_id)
        if conn is None:
            return
        if job.state == JobState.DONE:
            view = self._views[peer_id]
            bundle = [
                (h, payload)
                for h, payload in definition_closure(self.repo, job.result)
                if not view.contains(h.raw)
            ]
            self._send(conn, ResultMsg(job.target, job.style, job.result, tuple(bundle)))
            for h, _ in bundle:
                view.add_handle(h)
            view.add_handle(job.result)
        else:
            self._send(conn, FailureMsg(job.target, job.style, str(job.error)))

    def _on_result(self, conn: _Conn, msg: ResultMsg) -> None:
        for h, payload in msg.bundle:
            obj = _verify_payload(h, payload)
            self.repo.put(obj)
            self.runtime.object_arrived(h)
        with self._lock:
            view = self._views.get(conn.peer_id)
            if view is not None:
                for h, _ in msg.bundle:
                    view.add_handle(h)
                view.add_handle(msg.result)
        try:
            self.runtime.remote_completed(msg.job, msg.style, msg.result)
        except Exception:
            self.counters.add("protocol_errors")

    def _on_failure(self, conn: _Conn, msg: FailureMsg) -> None:
        self.runtime.remote_failed(
            msg.job, msg.style, EvaluationFailure(msg.job, f"remote: {msg.message}")
        )

    def _on_stats_request(self, conn: _Conn, msg: StatsRequest) -> None:
        values = {}
        for key, value in self.stats().items():
            if isinstance(value, float):
                values[key] = int(value * 1_000_000)  # seconds → µs
            elif isinstance(value, int):
                values[key] = value
        self._send(conn, StatsReply(values))

    def _on_stats_reply(self, conn: _Conn, msg: StatsReply) -> None:
        waiters = conn.stats_waiters
        conn.stats_waiters = []
        for state in waiters:
            state["values"] = msg.values
            state["event"].set()

    # -- fetch machinery ---------------------------------------------------------------

    def _start_fetch(self, handle: Handle) -> None:
        key = storage_key(handle)
        if self.repo.contains(handle):
            self.runtime.object_arrived(handle)
            return
        with self._lock:
            if key in self._fetching:
                return
            self._fetching[key] = {"handle": handle, "tried": set()}
        self._fetch_advance(key)

    def _fetch_advance(self, key: bytes) -> None:
        with self._lock:
            state = self._fetching.get(key)
            if state is None:
                return
            handle = state["handle"]
            tried = state["tried"]
            holders = [
                pid for pid, view in self._views.items()
                if view.contains(key) and pid not in tried
            ]
            others = [pid for pid in self._peers if pid not in tried]
            order = holders + [p for p in others if p not in holders]
            target = order[0] if order else None
            if target is not None:
                tried.add(target)
                conn = self._peers.get(target)
            else:
                del self._fetching[key]
                conn = None
        if target is None:
            self.runtime.fetch_failed(handle, NotFoundError(handle))
            return
        if conn is not None:
            self._send(conn, Request(handle))

    def _retry_fetches_for(self, peer_id: int) -> None:
        with self._lock:
            keys = list(self._fetching)
        for key in keys:
            self._fetch_advance(key)

    def _shutdown_net(self) -> None:
        self._stop = True
        for conn in list(self._conns.values()):
            self._drop_conn(conn, "shutdown")
        try:
            self._sel.unregister(self._listener)
        except (KeyError, ValueError):
            pass
        self._listener.close()
        try:
            self._sel.unregister(self._wake_r)
        except (KeyError, ValueError):
            pass
        os.close(self._wake_r)
        os.close(self._wake_w)
        self._sel.close()


def query_stats(addr, timeout: float = 10.0, node_id: Optional[int] = None) -> dict:
    """Standalone stats probe: HELLO, STATS_REQUEST, read STATS_REPLY."""
    nid = node_id if node_id is not None else int.from_bytes(os.urandom(8), "big") >> 1
    with socket.create_connection(addr, timeout=timeout) as sock:
        sock.settimeout(timeout)
        sock.sendall(encode_message(Hello(nid, ())))
        sock.sendall(encode_message(StatsRequest()))
        buf = b""
        deadline = time.monotonic() + timeout
        while True:
            while len(buf) >= 4:
                (length,) = struct.unpack(">I", buf[:4])
                if len(buf) < 4 + length:
                    break
                msg = decode_message(buf[4 : 4 + length])
                buf = buf[4 + length :]
                if isinstance(msg, StatsReply):
                    return msg.values
            if time.monotonic() > deadline:
                raise ProtocolError("timed out waiting for stats")
            chunk = sock.recv(65536)
            if not chunk:
                raise ProtocolError("connection closed before stats reply")
            buf += chunk
