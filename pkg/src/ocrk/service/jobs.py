"""Jobs, results and the persistent pull-based queue."""
from __future__ import annotations

import json
import logging
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import DuplicateJobId, UnknownJob
from ..types import BoundingBox
from .log import JobLog, scan
from .ratelimit import TokenBucket

log = logging.getLogger(__name__)

STATUSES = ("done", "failed")


@dataclass
class Job:
    job_id: str
    image_path: str
    callback: str | None = None
    enqueue_time: float = 0.0
    attempts: int = 0


@dataclass
class WordResult:
    box: BoundingBox
    text: str
    score: float

    def to_json(self) -> dict:
        return {"box": list(self.box.as_tuple()), "text": self.text, "score": self.score}

    @classmethod
    def from_json(cls, d: dict) -> "WordResult":
        return cls(BoundingBox(*d["box"]), d["text"], float(d["score"]))


@dataclass
class JobResult:
    job_id: str
    status: str = "done"
    words: list[WordResult] = field(default_factory=list)
    detect_ms: float = 0.0
    recognize_ms: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")
        if self.detect_ms < 0 or self.recognize_ms < 0:
            raise ValueError("timings must be non-negative")

    def to_json(self) -> dict:
        return {"job_id": self.job_id, "status": self.status, "words": [w.to_json() for w in self.words],
                "detect_ms": self.detect_ms, "recognize_ms": self.recognize_ms, "error": self.error}

    @classmethod
    def from_json(cls, d: dict) -> "JobResult":
        return cls(d["job_id"], d["status"], [WordResult.from_json(w) for w in d.get("words", [])],
                   float(d.get("detect_ms", 0.0)), float(d.get("recognize_ms", 0.0)), d.get("error"))


@dataclass
class QueueState:
    jobs: dict[str, Job] = field(default_factory=dict)
    pending: "OrderedDict[str, Job]" = field(default_factory=OrderedDict)
    results: dict[str, JobResult] = field(default_factory=dict)
    last_seq: int = 0


def replay(records) -> QueueState:
    state = QueueState()
    for rec in records:
        kind = rec["type"]
        state.last_seq = rec["seq"]
        if kind == "enqueued":
            job = Job(rec["job_id"], rec["image_path"], rec.get("callback"), rec.get("enqueue_time", 0.0))
            state.jobs[job.job_id] = job
            state.pending[job.job_id] = job
        elif kind == "started":
            job = state.jobs.get(rec["job_id"])
            if job is not None:
                job.attempts = max(job.attempts, rec.get("attempt", job.attempts + 1))
        elif rec["job_id"] in state.jobs and rec["job_id"] not in state.results:
            state.results[rec["job_id"]] = JobResult.from_json(rec["result"])
            state.pending.pop(rec["job_id"], None)
    return state


def recover(log_path) -> QueueState:
    """Rebuild queue state from a log without modifying it.  Claims are not persisted."""
    records, _, _ = scan(log_path)
    return replay(records)


def send_callback(address: str, message: dict, timeout: float = 2.0, retries: int = 1) -> bool:
    host, _, port = address.rpartition(":")
    line = (json.dumps(message) + "\n").encode("utf-8")
    for _ in range(retries + 1):
        try:
            with socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout) as sock:
                sock.sendall(line)
            return True
        except OSError:
            time.sleep(0.05)
    log.warning("callback to %s failed", address)
    return False


class JobQueue:
    """Linearizable enqueue / pull / complete over a durable log.

    Delivery is at-least-once: a pulled job becomes visible again once its
    claim expires.  Completion is first-write-wins, so each job keeps exactly
    one stored result.
    """

    def __init__(self, log_path, limiter: TokenBucket | None = None, clock=time.monotonic, callbacks: bool = True):
        self.log = JobLog(log_path)
        self.state = replay(self.log.records)
        self.limiter = limiter
        self.clock = clock
        self.callbacks = callbacks
        self.claims: dict[str, tuple[str, float]] = {}
        self._lock = threading.RLock()
        self._callback_threads: list[threading.Thread] = []

    @classmethod
    def in_dir(cls, data_dir, **kwargs) -> "JobQueue":
        return cls(Path(data_dir) / "queue.log", **kwargs)

    def enqueue(self, job: Job) -> int:
        with self._lock:
            if job.job_id in self.state.jobs:
                raise DuplicateJobId(job.job_id)
            job.enqueue_time = job.enqueue_time or time.time()
            seq = self.log.append("enqueued", {"job_id": job.job_id, "image_path": job.image_path,
                                               "callback": job.callback, "enqueue_time": job.enqueue_time})
            self.state.jobs[job.job_id] = job
            self.state.pending[job.job_id] = job
            return seq

    def pull(self, worker_id: str, visibility_timeout: float = 30.0) -> Job | None:
        with self._lock:
            now = self.clock()
            for job_id, job in self.state.pending.items():
                claim = self.claims.get(job_id)
                if claim is not None and claim[1] > now:
                    continue
                if self.limiter is not None and not self.limiter.try_acquire():
                    return None
                job.attempts += 1
                self.claims[job_id] = (worker_id, now + visibility_timeout)
                self.log.append("started", {"job_id": job_id, "worker": worker_id, "attempt": job.attempts},
                                sync=False)
                return Job(job.job_id, job.image_path, job.callback, job.enqueue_time, job.attempts)
            return None

    def complete(self, job_id: str, result: JobResult) -> bool:
        """Store the result.  Returns False when a result already existed (nothing changes)."""
        with self._lock:
            if job_id not in self.state.jobs:
                raise UnknownJob(job_id)
            if job_id in self.state.results:
                return False
            self.log.append("completed" if result.status == "done" else "failed",
                            {"job_id": job_id, "result": result.to_json()})
            self.state.results[job_id] = result
            self.state.pending.pop(job_id, None)
            self.claims.pop(job_id, None)
            callback = self.state.jobs[job_id].callback
        if callback and self.callbacks:
            t = threading.Thread(target=send_callback, args=(callback, {"job_id": job_id, "status": result.status}),
                                 daemon=True)
            t.start()
            self._callback_threads.append(t)
        return True

    def status(self, job_id: str) -> str:
        with self._lock:
            if job_id in self.state.results:
                return self.state.results[job_id].status
            if job_id not in self.state.jobs:
                raise UnknownJob(job_id)
            claim = self.claims.get(job_id)
            return "running" if claim and claim[1] > self.clock() else "pending"

    def result(self, job_id: str) -> JobResult | None:
        with self._lock:
            if job_id not in self.state.jobs:
                raise UnknownJob(job_id)
            return self.state.results.get(job_id)

    def stats(self) -> dict:
        with self._lock:
            done = sum(1 for r in self.state.results.values() if r.status == "done")
            return {"jobs": len(self.state.jobs), "pending": len(self.state.pending), "done": done,
                    "failed": len(self.state.results) - done}

    def flush_callbacks(self, timeout: float = 5.0) -> None:
        for t in self._callback_threads:
            t.join(timeout)
        self._callback_threads.clear()

    def close(self) -> None:
        self.flush_callbacks()
        self.log.close()
