"""On-disk formats: the table file backing history/latest stores and the
write-ahead log backing resilient stream producers.

Both share one layout: a fixed header followed by length-prefixed frames
(4-byte big-endian length, then a UTF-8 JSON payload). Recovery truncates a
torn tail frame so a crashed writer never poisons the file.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any, Iterable

from rgma.errors import StorageError

_VERSION = 1
TABLE_MAGIC = b"RGTF"
WAL_MAGIC = b"RGWL"


def _write_header(f, magic: bytes, name: str, schema_hash: bytes):
    name_b = name.encode("utf-8")
    f.write(magic)
    f.write(struct.pack(">H", _VERSION))
    f.write(struct.pack(">H", len(name_b)))
    f.write(name_b)
    f.write(struct.pack(">H", len(schema_hash)))
    f.write(schema_hash)


def _read_header(f, magic: bytes, name: str, schema_hash: bytes, path: str) -> int:
    got = f.read(4)
    if got != magic:
        raise StorageError(f"{path}: bad magic {got!r}")
    (version,) = struct.unpack(">H", f.read(2))
    if version != _VERSION:
        raise StorageError(f"{path}: unsupported format version {version}")
    (nlen,) = struct.unpack(">H", f.read(2))
    got_name = f.read(nlen).decode("utf-8")
    if got_name != name:
        raise StorageError(f"{path}: file is for {got_name!r}, expected {name!r}")
    (hlen,) = struct.unpack(">H", f.read(2))
    got_hash = f.read(hlen)
    if got_hash != schema_hash:
        raise StorageError(f"{path}: schema hash mismatch (table definition changed?)")
    return f.tell()


def _scan_frames(f, start: int) -> tuple[list[Any], int]:
    """Read frames from start; returns (payloads, end offset of last good frame)."""
    f.seek(start)
    out: list[Any] = []
    good_end = start
    while True:
        head = f.read(4)
        if len(head) < 4:
            break
        (length,) = struct.unpack(">I", head)
        body = f.read(length)
        if len(body) < length:
            break
        try:
            out.append(json.loads(body.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError):
            break
        good_end = f.tell()
    return out, good_end


class _FrameFile:
    """Append-oriented frame file with torn-tail recovery on open."""

    def __init__(self, path: str, magic: bytes, name: str, schema_hash: bytes = b""):
        self.path = path
        self._magic = magic
        self._name = name
        self._hash = schema_hash
        self._records: list[Any] = []
        try:
            if os.path.exists(path):
                with open(path, "rb") as f:
                    start = _read_header(f, magic, name, schema_hash, path)
                    self._records, good_end = _scan_frames(f, start)
                    size = os.path.getsize(path)
                if good_end < size:
                    with open(path, "r+b") as f:
                        f.truncate(good_end)
                self._f = open(path, "ab")
            else:
                parent = os.path.dirname(path)
                if parent:
                    os.makedirs(parent, exist_ok=True)
                self._f = open(path, "wb")
                _write_header(self._f, magic, name, schema_hash)
                self._f.flush()
        except OSError as exc:
            raise StorageError(f"{path}: {exc}") from exc

    def records(self) -> list[Any]:
        return list(self._records)

    def append(self, record: Any, durable: bool = False):
        payload = json.dumps(record, separators=(",", ":")).encode("utf-8")
        try:
            self._f.write(struct.pack(">I", len(payload)))
            self._f.write(payload)
            self._f.flush()
            if durable:
                os.fsync(self._f.fileno())
        except OSError as exc:
            raise StorageError(f"{self.path}: append failed: {exc}") from exc
        self._records.append(record)

    def rewrite(self, records: Iterable[Any]):
        records = list(records)
        tmp = self.path + ".tmp"
        try:
            self._f.close()
            with open(tmp, "wb") as f:
                _write_header(f, self._magic, self._name, self._hash)
                for record in records:
                    payload = json.dumps(record, separators=(",", ":")).encode("utf-8")
                    f.write(struct.pack(">I", len(payload)))
                    f.write(payload)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self.path)
            self._f = open(self.path, "ab")
        except OSError as exc:
            raise StorageError(f"{self.path}: rewrite failed: {exc}") from exc
        self._records = records

    def close(self):
        try:
            self._f.close()
        except OSError:
            pass


class TableFile(_FrameFile):
    """Store file for one table: header carries the schema hash, frames are rows."""

    def __init__(self, path: str, table: str, schema_hash: bytes):
        super().__init__(path, TABLE_MAGIC, table, schema_hash)


class WalFile(_FrameFile):
    """Write-ahead log; every append is fsynced before the caller acknowledges."""

    def __init__(self, path: str, owner: str):
        super().__init__(path, WAL_MAGIC, owner)

    def append(self, record: Any, durable: bool = True):
        super().append(record, durable=durable)
