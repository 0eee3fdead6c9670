"""Atomic file output and content hashing."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class AtomicStream:
    """Binary writer that hashes what it writes and renames into place on success.

    ``size`` must be the final byte count so the git-style header can be
    hashed up front.
    """

    def __init__(self, path: str | os.PathLike, size: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp")
        self._fh = os.fdopen(fd, "wb")
        self._hash = hashlib.sha1(f"blob {size}\0".encode())
        self._size, self._written = size, 0

    def write(self, data: bytes) -> None:
        self._fh.write(data)
        self._hash.update(data)
        self._written += len(data)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None and self._written == self._size:
            os.replace(self._tmp, self.path)
            return False
        os.unlink(self._tmp)
        if exc_type is None:
            raise ValueError(f"wrote {self._written} bytes, expected {self._size}")
        return False

    @property
    def sha1(self) -> str:
        return self._hash.hexdigest()


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def git_blob_sha1(data: bytes) -> str:
    """Hash identical to ``git hash-object`` for the same bytes."""
    h = hashlib.sha1(f"blob {len(data)}\0".encode())
    h.update(data)
    return h.hexdigest()


def write_sidecar(path: str | os.PathLike, payload: bytes | None, config: dict, sha1: str | None = None,
                  **extra) -> Path:
    """Write ``<path>.json`` describing an artifact: config echo plus content hash.

    Pass ``sha1`` instead of ``payload`` when the artifact was streamed to disk.
    """
    digest = git_blob_sha1(payload) if payload is not None else sha1
    meta = {"artifact": Path(path).name, "sha1": digest, "config": config}
    meta.update(extra)
    side = Path(str(path) + ".json")
    atomic_write_text(side, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side
