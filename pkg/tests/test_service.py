import json
import socket
import threading
import time

import numpy as np
import pytest

from ocrk.errors import CorruptLog, DuplicateJobId, UnknownJob
from ocrk.preprocess import write_pgm
from ocrk.service import (
    Job,
    JobLog,
    JobQueue,
    JobResult,
    Pipeline,
    Service,
    TokenBucket,
    WordResult,
    handle_request,
    recover,
    request,
    scan,
    wait_for_server,
)
from ocrk.service.log import HEADER
from ocrk.types import BoundingBox, GrayImage


class FakeClock:
    def __init__(self, t=0.0):
        self.t = t

    def __call__(self):
        return self.t


def test_log_round_trip(tmp_path):
    log = JobLog(tmp_path / "q.log")
    assert log.append("enqueued", {"job_id": "a", "image_path": "x"}) == 1
    assert log.append("started", {"job_id": "a"}, sync=False) == 2
    log.close()
    records, valid, clean = scan(tmp_path / "q.log")
    assert clean and [r["seq"] for r in records] == [1, 2]
    assert valid == (tmp_path / "q.log").stat().st_size
    with pytest.raises(ValueError):
        JobLog(tmp_path / "q.log").append("bogus", {})


@pytest.mark.parametrize("garbage", [b"\x05", HEADER.pack(100, 0) + b"{}", HEADER.pack(2, 0) + b"{}"])
def test_torn_tail_is_truncated(tmp_path, garbage):
    path = tmp_path / "q.log"
    log = JobLog(path)
    log.append("enqueued", {"job_id": "a", "image_path": "x"})
    log.close()
    good = path.stat().st_size
    with open(path, "ab") as fh:
        fh.write(garbage)
    with pytest.raises(CorruptLog):
        JobLog(path, repair=False)
    log = JobLog(path)
    assert path.stat().st_size == good
    assert log.append("enqueued", {"job_id": "b", "image_path": "y"}) == 2
    log.close()
    assert [r["job_id"] for r in scan(path)[0]] == ["a", "b"]


def test_token_bucket():
    clock = FakeClock()
    bucket = TokenBucket(10, clock=clock)
    assert sum(bucket.try_acquire() for _ in range(20)) == 10
    clock.t = 0.35
    assert sum(bucket.try_acquire() for _ in range(20)) == 3
    clock.t = 100.0
    assert bucket.available() == 10
    with pytest.raises(ValueError):
        TokenBucket(0)


def make_queue(tmp_path, **kw):
    kw.setdefault("callbacks", False)
    return JobQueue(tmp_path / "q.log", **kw)


def test_queue_fifo_and_claims(tmp_path):
    clock = FakeClock()
    q = make_queue(tmp_path, clock=clock)
    for k in range(3):
        q.enqueue(Job(f"j{k}", f"/img{k}"))
    with pytest.raises(DuplicateJobId):
        q.enqueue(Job("j0", "/x"))
    a = q.pull("w1", visibility_timeout=5)
    b = q.pull("w2", visibility_timeout=5)
    assert (a.job_id, b.job_id) == ("j0", "j1")
    assert q.status("j0") == "running" and q.status("j2") == "pending"
    clock.t = 6.0
    again = q.pull("w3", visibility_timeout=5)
    assert again.job_id == "j0" and again.attempts == 2
    with pytest.raises(UnknownJob):
        q.status("nope")
    q.close()


def test_first_write_wins(tmp_path):
    q = make_queue(tmp_path)
    q.enqueue(Job("a", "/img"))
    q.pull("w")
    first = JobResult("a", "done", [WordResult(BoundingBox(0, 0, 1, 1), "hi", 0.5)])
    assert q.complete("a", first)
    assert not q.complete("a", JobResult("a", "failed", error="late"))
    assert q.result("a") == first
    assert q.pull("w") is None
    q.close()
    assert recover(tmp_path / "q.log").results["a"] == first


def test_failed_result_retrievable(tmp_path):
    q = make_queue(tmp_path)
    q.enqueue(Job("a", "/img"))
    q.complete("a", JobResult("a", "failed", error="boom"))
    assert q.status("a") == "failed" and q.result("a").error == "boom"
    q.close()


def test_crash_recovery(tmp_path):
    q = make_queue(tmp_path)
    for k in range(10):
        q.enqueue(Job(f"j{k}", "/img"))
    for k in range(4):
        job = q.pull("w")
        q.complete(job.job_id, JobResult(job.job_id))
    q.pull("w")  # claimed but never finished
    q.log.close()  # simulated crash: no orderly shutdown
    state = recover(tmp_path / "q.log")
    assert len(state.pending) == 6 and len(state.results) == 4
    q2 = make_queue(tmp_path)
    assert q2.pull("w").job_id == "j4"
    q2.close()


def test_recover_empty(tmp_path):
    state = recover(tmp_path / "missing.log")
    assert not state.jobs and not state.pending


def test_rate_limited_pull_consumes_tokens_only_for_jobs(tmp_path):
    clock = FakeClock()
    q = make_queue(tmp_path, limiter=TokenBucket(2, clock=clock), clock=clock)
    assert q.pull("w") is None
    assert q.limiter.available() == 2
    for k in range(5):
        q.enqueue(Job(f"j{k}", "/img"))
    assert [q.pull("w") is not None for _ in range(3)] == [True, True, False]
    clock.t = 0.5
    assert q.pull("w") is not None
    q.close()


def test_callback_sent(tmp_path):
    server = socket.socket()
    server.bind(("127.0.0.1", 0))
    server.listen(1)
    received = []

    def accept():
        conn, _ = server.accept()
        received.append(conn.makefile().readline())
        conn.close()

    t = threading.Thread(target=accept)
    t.start()
    q = JobQueue(tmp_path / "q.log")
    q.enqueue(Job("a", "/img", callback=f"127.0.0.1:{server.getsockname()[1]}"))
    q.complete("a", JobResult("a"))
    q.flush_callbacks()
    t.join(5)
    server.close()
    assert json.loads(received[0]) == {"job_id": "a", "status": "done"}
    q.close()


def test_handle_request_errors(tmp_path):
    q = make_queue(tmp_path)
    assert handle_request(q, {"op": "enqueue"})["ok"] is False
    assert handle_request(q, {"op": "bogus"})["ok"] is False
    assert handle_request(q, {"op": "status", "job_id": "x"})["ok"] is False
    reply = handle_request(q, {"op": "enqueue", "job_id": "a", "image_path": "/x"})
    assert reply["ok"] and reply["job_id"] == "a"
    assert handle_request(q, {"op": "enqueue", "job_id": "a", "image_path": "/x"})["ok"] is False
    assert handle_request(q, {"op": "result", "job_id": "a"})["result"] is None
    q.close()


class StubRecognizer:
    def recognize(self, crop):
        return f"{crop.width}x{crop.height}"


def test_pipeline_blank_and_unreadable(tmp_path):
    pipe = Pipeline(StubRecognizer())
    write_pgm(tmp_path / "blank.pgm", GrayImage.blank(200, 100, 0.9))
    res = pipe.process_image(tmp_path / "blank.pgm", "b")
    assert res.status == "done" and res.words == []
    (tmp_path / "bad.pgm").write_bytes(b"junk")
    assert pipe.process_image(tmp_path / "bad.pgm", "x").status == "failed"
    assert pipe.process_image(tmp_path / "missing.pgm", "y").status == "failed"


def test_pipeline_maps_boxes_back_to_page_coordinates():
    px = np.full((1000, 1600), 0.9)
    px[400:440, 600:800] = 0.1
    res = Pipeline(StubRecognizer()).run(GrayImage(px))
    assert len(res.words) == 1
    assert res.words[0].box.as_tuple() == pytest.approx((600, 400, 800, 440), abs=2)


def test_service_protocol_round_trip(tmp_path):
    write_pgm(tmp_path / "blank.pgm", GrayImage.blank(100, 60, 0.9))
    q = make_queue(tmp_path)
    svc = Service(q, Pipeline(StubRecognizer()), workers=2).start()
    try:
        wait_for_server(svc.address)
        reply = request(svc.address, {"op": "enqueue", "job_id": "a", "image_path": str(tmp_path / "blank.pgm")})
        assert reply["ok"]
        deadline = time.monotonic() + 10
        while request(svc.address, {"op": "status", "job_id": "a"})["status"] != "done":
            assert time.monotonic() < deadline
            time.sleep(0.01)
        result = request(svc.address, {"op": "result", "job_id": "a"})
        assert JobResult.from_json(result["result"]).words == []
        with socket.create_connection(("127.0.0.1", int(svc.address.rsplit(":", 1)[1]))) as s:
            s.sendall(b"not json\n")
            assert json.loads(s.makefile().readline()) == {"ok": False, "error": "malformed JSON"}
        assert request(svc.address, {"op": "stats"})["done"] == 1
    finally:
        svc.stop()


def test_crashing_processor_marks_job_failed(tmp_path):
    def boom(job):
        raise RuntimeError("kaput")

    q = make_queue(tmp_path)
    svc = Service(q, boom).start()
    try:
        q.enqueue(Job("a", "/img"))
        deadline = time.monotonic() + 10
        while q.result("a") is None:
            assert time.monotonic() < deadline
            time.sleep(0.01)
        assert q.result("a").status == "failed" and "kaput" in q.result("a").error
    finally:
        svc.stop()


def test_recognition_time_grows_with_word_count():
    class SlowRecognizer:
        def recognize(self, crop):
            time.sleep(0.002)
            return "w"

    def page(n):
        px = np.full((400, 800), 0.9)
        for k in range(n):
            y, x = 30 + 70 * (k // 2), 40 + 380 * (k % 2)
            px[y : y + 14, x : x + 60] = 0.1
        return GrayImage(px)

    pipe = Pipeline(SlowRecognizer())
    one, ten = pipe.run(page(1)), pipe.run(page(10))
    assert (len(one.words), len(ten.words)) == (1, 10)
    assert ten.recognize_ms > one.recognize_ms
