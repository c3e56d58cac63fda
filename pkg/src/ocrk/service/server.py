"""Line-delimited JSON over TCP, plus the worker threads that drain the queue."""
from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import threading
import time
import uuid
from pathlib import Path
from typing import Callable

from ..errors import DuplicateJobId, OcrkError, UnknownJob
from .jobs import Job, JobQueue, JobResult

log = logging.getLogger(__name__)

DATA_DIR_ENV = "OCRK_DATA_DIR"


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "ocrk-data"))


class Worker(threading.Thread):
    """Pulls jobs while resources allow and stores their results."""

    def __init__(self, queue: JobQueue, processor: Callable[[Job], JobResult], worker_id: str,
                 visibility_timeout: float = 30.0, poll_interval: float = 0.005):
        super().__init__(name=f"worker-{worker_id}", daemon=True)
        self.queue = queue
        self.processor = processor
        self.worker_id = worker_id
        self.visibility_timeout = visibility_timeout
        self.poll_interval = poll_interval
        self.stopping = threading.Event()

    def run(self):
        while not self.stopping.is_set():
            job = self.queue.pull(self.worker_id, self.visibility_timeout)
            if job is None:
                self.stopping.wait(self.poll_interval)
                continue
            try:
                result = self.processor(job)
            except Exception as exc:  # a crashing job must not take the worker down
                log.exception("job %s crashed", job.job_id)
                result = JobResult(job.job_id, "failed", error=f"{type(exc).__name__}: {exc}")
            result.job_id = job.job_id
            self.queue.complete(job.job_id, result)

    def stop(self):
        self.stopping.set()


def handle_request(queue: JobQueue, msg: dict) -> dict:
    op = msg.get("op")
    try:
        if op == "enqueue":
            if not msg.get("image_path"):
                return {"ok": False, "error": "image_path is required"}
            job_id = msg.get("job_id") or uuid.uuid4().hex
            seq = queue.enqueue(Job(job_id, msg["image_path"], msg.get("callback")))
            return {"ok": True, "job_id": job_id, "seq": seq}
        if op == "status":
            return {"ok": True, "job_id": msg.get("job_id"), "status": queue.status(msg.get("job_id"))}
        if op == "result":
            result = queue.result(msg.get("job_id"))
            if result is None:
                return {"ok": True, "job_id": msg.get("job_id"), "status": queue.status(msg.get("job_id")),
                        "result": None}
            return {"ok": True, "job_id": result.job_id, "status": result.status, "result": result.to_json()}
        if op == "stats":
            return {"ok": True, **queue.stats()}
    except DuplicateJobId as exc:
        return {"ok": False, "error": f"duplicate job id {exc.args[0]}"}
    except UnknownJob as exc:
        return {"ok": False, "error": f"unknown job {exc.args[0]}"}
    except OcrkError as exc:
        return {"ok": False, "error": str(exc)}
    return {"ok": False, "error": f"unknown op {op!r}"}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                msg = json.loads(line.decode("utf-8"))
                reply = handle_request(self.server.queue, msg) if isinstance(msg, dict) else \
                    {"ok": False, "error": "request must be a JSON object"}
            except (UnicodeDecodeError, ValueError):
                reply = {"ok": False, "error": "malformed JSON"}
            self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            self.wfile.flush()


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class Service:
    """Queue + TCP front end + worker fleet in one process."""

    def __init__(self, queue: JobQueue, processor: Callable[[Job], JobResult], host: str = "127.0.0.1",
                 port: int = 0, workers: int = 1, visibility_timeout: float = 30.0):
        self.queue = queue
        self.server = _TCPServer((host, port), _Handler)
        self.server.queue = queue
        self.workers = [Worker(queue, processor, f"w{k}", visibility_timeout) for k in range(workers)]
        self._thread = threading.Thread(target=self.server.serve_forever, name="tcp", daemon=True)

    @property
    def address(self) -> str:
        host, port = self.server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "Service":
        self._thread.start()
        for w in self.workers:
            w.start()
        return self

    def stop(self) -> None:
        for w in self.workers:
            w.stop()
        for w in self.workers:
            w.join(5.0)
        self.server.shutdown()
        self.server.server_close()
        self.queue.close()


def request(address: str, message: dict, timeout: float = 10.0) -> dict:
    host, _, port = address.rpartition(":")
    with socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout) as sock:
        sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = sock.recv(65536)
            if not chunk:
                break
            buf += chunk
    if not buf:
        raise ConnectionError(f"no reply from {address}")
    return json.loads(buf.decode("utf-8"))


def wait_for_server(address: str, timeout: float = 10.0) -> None:
    deadline = time.monotonic() + timeout
    while True:
        try:
            request(address, {"op": "stats"}, timeout=1.0)
            return
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
