"""Append-only, checksummed job log.

Each record is ``u32 length | u32 crc32 | payload`` (little-endian), the
payload being a UTF-8 JSON object with at least ``seq`` and ``type``.
Replay stops at the first short or corrupt record; ``repair`` truncates the
file there so new appends follow the last good record.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Iterator

from ..errors import CorruptLog, StorageFailure

log = logging.getLogger(__name__)

HEADER = struct.Struct("<II")
RECORD_TYPES = ("enqueued", "started", "completed", "failed")


def scan(path) -> tuple[list[dict], int, bool]:
    """Read every valid record.  Returns ``(records, valid_bytes, clean)``."""
    path = Path(path)
    if not path.exists():
        return [], 0, True
    data = path.read_bytes()
    records = []
    pos = 0
    last_seq = 0
    while pos < len(data):
        if pos + HEADER.size > len(data):
            return records, pos, False
        length, crc = HEADER.unpack_from(data, pos)
        body = data[pos + HEADER.size : pos + HEADER.size + length]
        if len(body) < length or zlib.crc32(body) != crc:
            return records, pos, False
        try:
            rec = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            return records, pos, False
        if not isinstance(rec, dict) or rec.get("type") not in RECORD_TYPES or not isinstance(rec.get("seq"), int) \
                or rec["seq"] <= last_seq:
            return records, pos, False
        last_seq = rec["seq"]
        records.append(rec)
        pos += HEADER.size + length
    return records, pos, True


class JobLog:
    def __init__(self, path, repair: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        records, valid, clean = scan(self.path)
        if not clean:
            last = records[-1]["seq"] if records else 0
            if not repair:
                raise CorruptLog(last, valid)
            log.warning("truncating torn log %s at byte %d (after sequence %d)", self.path, valid, last)
            with open(self.path, "r+b") as fh:
                fh.truncate(valid)
                fh.flush()
                os.fsync(fh.fileno())
        self.records = records
        self.last_seq = records[-1]["seq"] if records else 0
        self._lock = threading.Lock()
        self._fh = open(self.path, "ab")

    def append(self, type_: str, payload: dict, sync: bool = True) -> int:
        if type_ not in RECORD_TYPES:
            raise ValueError(f"unknown record type {type_!r}")
        with self._lock:
            seq = self.last_seq + 1
            body = json.dumps({"seq": seq, "type": type_, **payload}, separators=(",", ":")).encode("utf-8")
            try:
                self._fh.write(HEADER.pack(len(body), zlib.crc32(body)) + body)
                self._fh.flush()
                if sync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageFailure(f"cannot append to {self.path}: {exc}") from exc
            self.last_seq = seq
            return seq

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()
