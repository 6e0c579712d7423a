"""Single-node execution engine: job table, worker pool, dependency tracking.

Jobs are (target handle, style) pairs, deduplicated against both the memo
table and in-flight work. A worker runs a job's evaluation to completion
unless it discovers unevaluated encodes (they become sub-jobs, the sibling
groups the distributed scheduler spreads) or missing objects (a fetch is
requested from peers). Either way the job releases its worker and transitions
to blocked; a blocked job never holds a worker, so a running job by
construction has its whole minimum repository local. When a job restarts, the
memo table makes the already-finished parts free, so no guest procedure runs
more than once per (thunk, style).

Delegation is pluggable: a delegator (the net module's Node) may claim a
fresh thunk job for a remote peer; the local job then waits for the peer's
result. Without a delegator everything runs locally.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from enum import Enum
from typing import Optional

from .errors import EvaluationFailure, FixError, JobTimeout, NotFoundError
from .handle import (
    EncodeStyle,
    Handle,
    Kind,
    Laziness,
    as_object,
    memo_key,
    storage_key,
)
from .semantics import EvalContext, eval_shallow, eval_strict, strip_encode
from .store import Repository

COUNTER_FIELDS = (
    "guest_invocations",
    "objects_fetched",
    "bytes_attached",
    "bytes_network",
    "jobs_delegated",
    "late_binding_violations",
)


class Counters:
    """Monotone instrumentation counters, safe to read at any time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._values = {name: 0 for name in COUNTER_FIELDS}
        self._job_wall: list[float] = []

    def add(self, name: str, delta: int = 1) -> None:
        with self._lock:
            self._values[name] = self._values.get(name, 0) + delta

    def record_job_wall(self, seconds: float) -> None:
        with self._lock:
            self._job_wall.append(seconds)

    def get(self, name: str) -> int:
        with self._lock:
            return self._values.get(name, 0)

    def snapshot(self) -> dict:
        with self._lock:
            snap = dict(self._values)
            snap["jobs_completed"] = len(self._job_wall)
            snap["job_wall_total_s"] = sum(self._job_wall)
        return snap


class NeedEncodes(Exception):
    """Raised by the job context when input encodes are not yet memoized."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(f"{len(self.pairs)} unevaluated encodes")


class JobState(Enum):
    PENDING = "pending"
    BLOCKED = "blocked"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class Job:
    __slots__ = (
        "id", "target", "style", "state", "result", "error", "waiting_jobs",
        "waiting_handles", "dependents", "origin", "sibling_ordinal",
        "delegated_to", "on_done", "submitted_at", "started_at",
        "finished_at", "restarts",
    )

    def __init__(self, jid: int, target: Handle, style: EncodeStyle,
                 origin: str, sibling_ordinal: Optional[int]):
        self.id = jid
        self.target = target
        self.style = style
        self.state = JobState.PENDING
        self.result: Optional[Handle] = None
        self.error: Optional[BaseException] = None
        self.waiting_jobs: set[int] = set()
        self.waiting_handles: set[bytes] = set()
        self.dependents: set[int] = set()
        self.origin = origin
        self.sibling_ordinal = sibling_ordinal
        self.delegated_to: Optional[int] = None
        self.on_done: list = []
        self.submitted_at = time.monotonic()
        self.started_at: Optional[float] = None
        self.finished_at: Optional[float] = None
        self.restarts = 0


def _job_key(target: Handle, style: EncodeStyle) -> tuple[bytes, EncodeStyle]:
    if target.laziness != Laziness.VALUE:
        return memo_key(target), style
    return storage_key(target), style


class _JobContext(EvalContext):
    """Evaluation context that turns unmemoized encodes into sub-jobs."""

    def __init__(self, runtime: "Runtime", job: Job):
        super().__init__(runtime.repo, runtime.registry, runtime.counters,
                         force_cache=runtime.force_cache)
        self._runtime = runtime
        self._job = job

    def request_encodes(self, pairs) -> None:
        missing = [
            (t, s) for t, s in pairs if self.repo.memo_get(t, s) is None
        ]
        if missing:
            raise NeedEncodes(missing)

    def eval_encode(self, thunk: Handle, style: EncodeStyle) -> Handle:
        hit = self.repo.memo_get(thunk, style)
        if hit is None:
            raise NeedEncodes([(thunk, style)])
        return hit


class Runtime:
    """Worker pool plus job table. submit/await are safe from any thread."""

    def __init__(self, repo: Repository, registry, workers: Optional[int] = None,
                 counters: Optional[Counters] = None):
        import os

        self.repo = repo
        self.registry = registry
        self.counters = counters or Counters()
        self.force_cache: dict = {}  # shared one-step results across restarts
        self.delegator = None  # set by the net layer; placement + fetch hooks
        if workers is None:
            workers = max(1, (os.cpu_count() or 2) - 1)
        self._cv = threading.Condition()
        self._jobs: dict[int, Job] = {}
        self._index: dict[tuple[bytes, EncodeStyle], int] = {}
        self._ready: deque[int] = deque()
        self._handle_waiters: dict[bytes, set[int]] = {}
        self._next_id = 1
        self._stop = False
        self._workers = [
            threading.Thread(target=self._worker, name=f"fix-worker-{i}", daemon=True)
            for i in range(workers)
        ]
        for t in self._workers:
            t.start()

    # -- public surface --------------------------------------------------------

    @property
    def worker_count(self) -> int:
        return len(self._workers)

    def submit(self, target: Handle, style: EncodeStyle = EncodeStyle.STRICT,
               *, origin: str = "local") -> int:
        with self._cv:
            return self._submit_locked(target, style, origin=origin,
                                       sibling_ordinal=None)

    def await_result(self, job_id: int, timeout: Optional[float] = None) -> Handle:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cv:
            while True:
                job = self._jobs[job_id]
                if job.state == JobState.DONE:
                    return job.result
                if job.state == JobState.FAILED:
                    raise job.error
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise JobTimeout(f"job {job_id} still {job.state.value}")
                    self._cv.wait(remaining)
                else:
                    self._cv.wait()

    def eval(self, target: Handle, style: EncodeStyle = EncodeStyle.STRICT,
             timeout: Optional[float] = None) -> Handle:
        return self.await_result(self.submit(target, style), timeout)

    def job_state(self, job_id: int) -> JobState:
        with self._cv:
            return self._jobs[job_id].state

    def add_done_callback(self, job_id: int, fn) -> None:
        """fn(job) runs when the job completes; immediately if already done."""
        with self._cv:
            job = self._jobs[job_id]
            if job.state in (JobState.DONE, JobState.FAILED):
                run_now = True
            else:
                job.on_done.append(fn)
                run_now = False
        if run_now:
            fn(job)

    def stats(self) -> dict:
        snap = self.counters.snapshot()
        with self._cv:
            snap["jobs_total"] = len(self._jobs)
            snap["jobs_ready"] = len(self._ready)
        return snap

    def shutdown(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        for t in self._workers:
            t.join(timeout=5)

    # -- net-layer surface -----------------------------------------------------

    def object_arrived(self, handle: Handle) -> None:
        """A fetched or pushed object is now local; wake jobs waiting on it."""
        key = storage_key(handle)
        with self._cv:
            waiters = self._handle_waiters.pop(key, ())
            for jid in waiters:
                job = self._jobs[jid]
                job.waiting_handles.discard(key)
                if not job.waiting_handles and not job.waiting_jobs:
                    self._requeue_locked(job)
            self._cv.notify_all()

    def fetch_failed(self, handle: Handle, error: Exception) -> None:
        key = storage_key(handle)
        with self._cv:
            waiters = self._handle_waiters.pop(key, ())
            for jid in list(waiters):
                self._fail_locked(self._jobs[jid], error)
            self._cv.notify_all()

    def remote_completed(self, target: Handle, style: EncodeStyle,
                         result: Handle) -> None:
        self.repo.memo_put(target, style, result)
        key = _job_key(target, style)
        with self._cv:
            jid = self._index.get(key)
            if jid is not None:
                job = self._jobs[jid]
                if job.state not in (JobState.DONE, JobState.FAILED):
                    self._complete_locked(job, result)
            self._cv.notify_all()

    def remote_failed(self, target: Handle, style: EncodeStyle,
                      error: Exception) -> None:
        key = _job_key(target, style)
        with self._cv:
            jid = self._index.get(key)
            if jid is not None:
                job = self._jobs[jid]
                if job.state not in (JobState.DONE, JobState.FAILED):
                    self._fail_locked(job, error)
            self._cv.notify_all()

    def requeue_delegated(self, peer_id: int) -> None:
        """Peer went away: its delegated jobs run locally instead."""
        with self._cv:
            for job in self._jobs.values():
                if job.delegated_to == peer_id and job.state == JobState.BLOCKED:
                    job.delegated_to = None
                    self._requeue_locked(job)
            self._cv.notify_all()

    # -- internals ---------------------------------------------------------------

    def _submit_locked(self, target: Handle, style: EncodeStyle, *,
                       origin: str, sibling_ordinal: Optional[int]) -> int:
        key = _job_key(target, style)
        existing = self._index.get(key)
        if existing is not None:
            return existing

        jid = self._next_id
        self._next_id += 1
        job = Job(jid, target, style, origin, sibling_ordinal)
        self._jobs[jid] = job
        self._index[key] = jid

        if target.laziness == Laziness.VALUE:
            # An already-normal blob needs no worker at all.
            if (target.kind == Kind.BLOB and style == EncodeStyle.STRICT
                    and self.repo.contains(target)):
                self._complete_locked(job, as_object(target))
                return jid
        else:
            hit = self.repo.memo_get(strip_encode(target), style)
            if hit is not None:
                self._complete_locked(job, hit)
                return jid
            if self.delegator is not None and origin == "local":
                # Jobs that arrived via DELEGATE are pinned here: re-delegating
                # the same job would be multi-hop routing and can cycle. Their
                # sub-jobs are fresh placement decisions (submitted as local).
                try:
                    peer = self.delegator.place(strip_encode(target), style,
                                                sibling_ordinal=sibling_ordinal)
                    if peer is not None:
                        job.state = JobState.BLOCKED
                        job.delegated_to = peer
                        self.counters.add("jobs_delegated")
                        self.delegator.send_delegate(peer, strip_encode(target), style)
                        return jid
                except Exception:
                    # Placement trouble is never fatal: run locally instead.
                    job.state = JobState.PENDING
                    job.delegated_to = None
        self._ready.append(jid)
        self._cv.notify_all()
        return jid

    def _requeue_locked(self, job: Job) -> None:
        if job.state in (JobState.DONE, JobState.FAILED):
            return
        job.state = JobState.PENDING
        job.restarts += 1
        job.waiting_jobs.clear()
        job.waiting_handles.clear()
        self._ready.append(job.id)
        self._cv.notify_all()

    def _complete_locked(self, job: Job, result: Handle) -> None:
        job.state = JobState.DONE
        job.result = result
        job.finished_at = time.monotonic()
        if job.started_at is not None:
            self.counters.record_job_wall(job.finished_at - job.started_at)
        for dep_id in job.dependents:
            dep = self._jobs.get(dep_id)
            if dep is None or dep.state != JobState.BLOCKED:
                continue
            dep.waiting_jobs.discard(job.id)
            if not dep.waiting_jobs and not dep.waiting_handles:
                self._requeue_locked(dep)
        callbacks = job.on_done
        job.on_done = []
        self._cv.notify_all()
        for fn in callbacks:
            fn(job)

    def _fail_locked(self, job: Job, error: BaseException) -> None:
        job.state = JobState.FAILED
        job.error = error
        job.finished_at = time.monotonic()
        # Failure is not memoized and the job may be resubmitted.
        self._index.pop(_job_key(job.target, job.style), None)
        for dep_id in list(job.dependents):
            dep = self._jobs.get(dep_id)
            if dep is not None and dep.state not in (JobState.DONE, JobState.FAILED):
                self._fail_locked(dep, error)
        callbacks = job.on_done
        job.on_done = []
        self._cv.notify_all()
        for fn in callbacks:
            fn(job)

    def _worker(self) -> None:
        while True:
            with self._cv:
                while not self._stop and not self._ready:
                    self._cv.wait()
                if self._stop:
                    return
                job = self._jobs[self._ready.popleft()]
                if job.state != JobState.PENDING:
                    continue
                job.state = JobState.RUNNING
                if job.started_at is None:
                    job.started_at = time.monotonic()
            self._run_job(job)

    def _run_job(self, job: Job) -> None:
        ctx = _JobContext(self, job)
        try:
            if job.style == EncodeStyle.STRICT:
                result = eval_strict(ctx, job.target)
            else:
                result = eval_shallow(ctx, job.target)
        except NeedEncodes as ne:
            self._block_on_encodes(job, ne.pairs)
        except NotFoundError as nf:
            self._block_on_handles(job, nf.handles)
        except FixError as e:
            with self._cv:
                self._fail_locked(job, e)
        except Exception as e:  # defensive: a bug should fail one job, not a worker
            with self._cv:
                self._fail_locked(job, EvaluationFailure(job.target, e))
        else:
            with self._cv:
                self._complete_locked(job, result)

    def _block_on_encodes(self, job: Job, pairs) -> None:
        with self._cv:
            job.state = JobState.BLOCKED
            for ordinal, (thunk, style) in enumerate(pairs):
                sub_id = self._submit_locked(
                    thunk, style, origin="local",
                    sibling_ordinal=ordinal if len(pairs) > 1 else None,
                )
                sub = self._jobs[sub_id]
                if sub.state == JobState.DONE:
                    continue
                if sub.state == JobState.FAILED:
                    self._fail_locked(job, sub.error)
                    return
                sub.dependents.add(job.id)
                job.waiting_jobs.add(sub_id)
            if not job.waiting_jobs:
                self._requeue_locked(job)

    def _block_on_handles(self, job: Job, handles) -> None:
        fetchable = []
        with self._cv:
            job.state = JobState.BLOCKED
            for h in handles:
                key = storage_key(h)
                if self.repo.contains(h):
                    continue
                job.waiting_handles.add(key)
                waiters = self._handle_waiters.setdefault(key, set())
                if not waiters:
                    fetchable.append(h)
                waiters.add(job.id)
            if not job.waiting_handles:
                self._requeue_locked(job)
                return
            if self.delegator is None:
                missing = [Handle.from_bytes(k) for k in job.waiting_handles]
                for key in job.waiting_handles:
                    waiters = self._handle_waiters.get(key)
                    if waiters:
                        waiters.discard(job.id)
                        if not waiters:
                            self._handle_waiters.pop(key, None)
                self._fail_locked(job, NotFoundError(missing))
                return
        if fetchable:
            self.delegator.request_objects(fetchable)
