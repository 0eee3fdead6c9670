"""Binary shot files and their CSV debug export.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"ADABSHOT"
    8       2     version (u16) = 1
    10      2     d (u16)
    12      2     rounds T (u16)
    14      2     n_checks (u16)
    16      2     n_final (u16), data-readout detectors per shot
    18      8     p (f64)
    26      1     basis, ASCII 'X' or 'Z'
    27      1     kind (u8): 0 memory experiment, 1 OSLA one-or-two-round mix
    28      1     tag length L (u8)
    29      L     round-1 convention tag, ASCII
    29+L    8     n_shots (u64)
    37+L    8     master_seed (u64)
    45+L    8     first shot index (u64)
    53+L    ...   n_shots records

A memory record packs ``T * n_checks`` history bits (round-major), then the
``n_final`` final-detector bits, then the observable-flip bit, MSB first,
zero-padded to a whole number of bytes.  Shot ``k`` of a memory file has
seed ``shot_seeds(master_seed, first + k, 1)``.

An OSLA record (``T = 2``, ``n_final = 0``) starts with one bit ``r - 1``
giving the number of rounds actually run, followed by the two history rows
(the second all-zero when ``r = 1``) and the flip bit.  Rounds and seeds
follow :func:`adabort.predictor.make_osla_dataset`.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass

import numpy as np

from .circuit import ROUND1_CONVENTION, AnnotatedCircuit
from .fileio import AtomicStream, atomic_write_bytes
from .frame_sim import ShotBatch
from .predictor import OslaShots
from .rng import shot_seeds

MAGIC = b"ADABSHOT"
VERSION = 1
KIND_MEMORY, KIND_OSLA = 0, 1
CSV_COLUMNS = ("shot", "seed", "history_hex", "final_hex", "flip")


@dataclass(frozen=True)
class ShotFileHeader:
    d: int
    rounds: int
    n_checks: int
    n_final: int
    p: float
    basis: str
    n_shots: int
    master_seed: int
    first_shot: int = 0
    convention: str = ROUND1_CONVENTION
    kind: int = KIND_MEMORY

    @classmethod
    def for_circuit(cls, circuit: AnnotatedCircuit, n_shots: int, master_seed: int, first_shot: int = 0):
        return cls(circuit.layout.distance, circuit.rounds, circuit.n_checks, len(circuit.final_detectors),
                   circuit.error_rate, circuit.basis, n_shots, master_seed, first_shot)

    @property
    def record_bits(self) -> int:
        return self.rounds * self.n_checks + self.n_final + 1 + (self.kind == KIND_OSLA)

    @property
    def record_bytes(self) -> int:
        return (self.record_bits + 7) // 8

    def pack(self) -> bytes:
        tag = self.convention.encode("ascii")
        return b"".join([
            MAGIC,
            struct.pack("<HHHHHd", VERSION, self.d, self.rounds, self.n_checks, self.n_final, self.p),
            self.basis.encode("ascii"),
            struct.pack("<BB", self.kind, len(tag)),
            tag,
            struct.pack("<QQQ", self.n_shots, self.master_seed & (2**64 - 1), self.first_shot),
        ])

    @classmethod
    def unpack(cls, data: bytes) -> tuple["ShotFileHeader", int]:
        if data[:8] != MAGIC:
            raise ValueError("not a shot file (bad magic)")
        version, d, T, C, nf, p = struct.unpack_from("<HHHHHd", data, 8)
        if version != VERSION:
            raise ValueError(f"unsupported shot file version {version}")
        basis = data[26:27].decode("ascii")
        kind, tag_len = data[27], data[28]
        if kind not in (KIND_MEMORY, KIND_OSLA):
            raise ValueError(f"unknown shot file kind {kind}")
        tag = data[29:29 + tag_len].decode("ascii")
        off = 29 + tag_len
        n, seed, first = struct.unpack_from("<QQQ", data, off)
        return cls(d, T, C, nf, p, basis, n, seed, first, tag, kind), off + 24


def _records(batch) -> np.ndarray:
    n = len(batch)
    cols = []
    if isinstance(batch, OslaShots):
        cols.append((batch.rounds - 1).reshape(n, 1))
    cols.append(batch.events.reshape(n, -1))
    if isinstance(batch, ShotBatch):
        cols.append(batch.final_events.reshape(n, -1))
    cols.append(batch.flips.reshape(n, 1))
    return np.packbits(np.concatenate(cols, axis=1).astype(np.uint8), axis=1)


def osla_header(d: int, n_checks: int, p: float, basis: str, n_shots: int, master_seed: int) -> ShotFileHeader:
    return ShotFileHeader(d, 2, n_checks, 0, p, basis, n_shots, master_seed, kind=KIND_OSLA)


def shot_file_bytes(header: ShotFileHeader, batch) -> bytes:
    if len(batch) != header.n_shots:
        raise ValueError("header shot count does not match the batch")
    if batch.events.shape[1:] != (header.rounds, header.n_checks):
        raise ValueError("batch history shape does not match the header")
    if isinstance(batch, OslaShots) != (header.kind == KIND_OSLA):
        raise ValueError("batch type does not match the header kind")
    return header.pack() + _records(batch).tobytes()


def write_shot_file(path, header: ShotFileHeader, batch) -> bytes:
    data = shot_file_bytes(header, batch)
    atomic_write_bytes(path, data)
    return data


def parse_shot_file(data: bytes):
    """Header plus a ``ShotBatch`` (memory files) or ``OslaShots`` (OSLA files)."""
    header, off = ShotFileHeader.unpack(data)
    rb = header.record_bytes
    expected = off + rb * header.n_shots
    if len(data) != expected:
        raise ValueError(f"shot file is {len(data)} bytes, header implies {expected}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(header.n_shots, rb)
    bits = np.unpackbits(raw, axis=1)[:, : header.record_bits]
    h = header.rounds * header.n_checks
    if header.kind == KIND_OSLA:
        rounds = bits[:, 0].astype(np.int64) + 1
        events = np.ascontiguousarray(bits[:, 1:1 + h]).reshape(header.n_shots, 2, header.n_checks)
        return header, OslaShots(rounds, events, np.ascontiguousarray(bits[:, -1]), shot_seeds(header.master_seed, 0, header.n_shots))
    events = np.ascontiguousarray(bits[:, :h]).reshape(header.n_shots, header.rounds, header.n_checks)
    final = np.ascontiguousarray(bits[:, h:h + header.n_final])
    flips = np.ascontiguousarray(bits[:, -1])
    seeds = shot_seeds(header.master_seed, header.first_shot, header.n_shots) if header.n_shots else np.zeros(0, np.uint64)
    return header, ShotBatch(events, final, flips, seeds)


def read_shot_file(path):
    with open(path, "rb") as fh:
        return parse_shot_file(fh.read())


def shots_csv(header: ShotFileHeader, batch) -> str:
    """One line per shot: index, seed and hex-packed bit groups (MSB first).

    For OSLA files ``final_hex`` is empty and the history covers only the
    rounds actually run.
    """
    n = len(batch)
    if isinstance(batch, OslaShots):
        hist = [np.packbits(batch.events[i, : batch.rounds[i]].reshape(-1)) for i in range(n)]
        final = [np.zeros(0, np.uint8)] * n
    else:
        hist = np.packbits(batch.events.reshape(n, -1), axis=1)
        final = np.packbits(batch.final_events.reshape(n, -1), axis=1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i in range(n):
        w.writerow([header.first_shot + i, f"{int(batch.seeds[i]):016x}", hist[i].tobytes().hex(),
                    final[i].tobytes().hex(), int(batch.flips[i])])
    return buf.getvalue()


def write_shot_stream(path, header: ShotFileHeader, batches) -> str:
    """Write a shot file chunk by chunk; returns its git-style content hash.

    ``batches`` yields memory ``ShotBatch`` chunks in shot order whose sizes
    add up to ``header.n_shots``.
    """
    size = len(header.pack()) + header.record_bytes * header.n_shots
    with AtomicStream(path, size) as out:
        out.write(header.pack())
        for batch in batches:
            if batch.events.shape[1:] != (header.rounds, header.n_checks):
                raise ValueError("batch history shape does not match the header")
            out.write(_records(batch).tobytes())
    return out.sha1
