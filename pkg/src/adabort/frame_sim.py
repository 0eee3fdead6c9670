"""Pauli-frame Monte-Carlo sampling of memory circuits.

Each shot propagates an X/Z error frame, packed 64 qubits per ``uint64``
word, through the circuit.  Every noise site draws exactly one SplitMix64
output from the shot's own stream (see :mod:`adabort.rng`), whether or not
it fires, so shot ``i`` depends only on ``(circuit, shot_seed_i)``.  Batches
split into contiguous chunks that may run on worker threads; results land
in index order, so output is identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .circuit import (
    OP_CX,
    OP_DEP1,
    OP_DEP2,
    OP_FLIP,
    OP_H,
    OP_M,
    OP_R,
    AnnotatedCircuit,
    SyndromeHistory,
)
from .rng import shot_seeds

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GAUGE_SALT = np.uint64(0xD1B54A32D192ED03)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0

PAULI_CODE = {"I": 0, "X": 1, "Y": 2, "Z": 3}
DEFAULT_CHUNK = 4096


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(seed, k):
    z = _mix(seed + np.uint64(k + 1) * _GAMMA)
    return (z >> np.uint64(11)) * _INV53


@numba.njit(cache=True, inline="always")
def _get(words, q):
    return (words[q >> 6] >> np.uint64(q & 63)) & _ONE


@numba.njit(cache=True, inline="always")
def _toggle(words, q):
    words[q >> 6] ^= _ONE << np.uint64(q & 63)


@numba.njit(cache=True, inline="always")
def _clear(words, q):
    words[q >> 6] &= ~(_ONE << np.uint64(q & 63))


@numba.njit(cache=True, inline="always")
def _apply_pauli(xw, zw, q, code):
    # code: 0=I 1=X 2=Y 3=Z
    if code == 1 or code == 2:
        _toggle(xw, q)
    if code == 2 or code == 3:
        _toggle(zw, q)


@numba.njit(cache=True, nogil=True)
def _sample_kernel(ops, t0, t1, probs, det_offsets, det_targets, obs_targets,
                   n_qubits, n_meas, seeds, inj_pos, inj_q, inj_code, gauge,
                   out_dets, out_obs, out_rec):
    n_words = (n_qubits + 63) >> 6
    xw = np.zeros(n_words, np.uint64)
    zw = np.zeros(n_words, np.uint64)
    pend = np.zeros(n_words, np.uint64)
    rec = np.zeros(n_meas, np.uint8)
    n_ops = ops.shape[0]
    n_inj = inj_pos.shape[0]
    n_dets = det_offsets.shape[0] - 1
    keep_rec = out_rec.shape[0] > 0
    for s in range(seeds.shape[0]):
        xw[:] = 0
        zw[:] = 0
        pend[:] = 0
        seed = seeds[s]
        gseed = seed ^ _GAUGE_SALT
        site = 0
        gcount = 0
        m = 0
        j = 0
        for k in range(n_ops):
            while j < n_inj and inj_pos[j] == k:
                _apply_pauli(xw, zw, inj_q[j], inj_code[j])
                j += 1
            op = ops[k]
            a = t0[k]
            if op == OP_CX:
                b = t1[k]
                if _get(xw, a):
                    _toggle(xw, b)
                if _get(zw, b):
                    _toggle(zw, a)
            elif op == OP_DEP2:
                r = _uniform(seed, site)
                site += 1
                p = probs[k]
                if r < p:
                    c = int(r * 15.0 / p)
                    if c > 14:
                        c = 14
                    c += 1
                    _apply_pauli(xw, zw, a, c >> 2)
                    _apply_pauli(xw, zw, t1[k], c & 3)
            elif op == OP_DEP1:
                r = _uniform(seed, site)
                site += 1
                p = probs[k]
                if r < p:
                    c = int(r * 3.0 / p)
                    if c > 2:
                        c = 2
                    _apply_pauli(xw, zw, a, c + 1)
            elif op == OP_FLIP:
                r = _uniform(seed, site)
                site += 1
                if r < probs[k]:
                    _toggle(pend, a)
            elif op == OP_M:
                rec[m] = np.uint8(_get(xw, a) ^ _get(pend, a))
                _clear(pend, a)
                m += 1
                if gauge:
                    if _uniform(gseed, gcount) < 0.5:
                        _toggle(zw, a)
                    gcount += 1
            elif op == OP_H:
                xa = _get(xw, a)
                za = _get(zw, a)
                if xa != za:
                    _toggle(xw, a)
                    _toggle(zw, a)
            elif op == OP_R:
                _clear(xw, a)
                _clear(zw, a)
                if gauge:
                    if _uniform(gseed, gcount) < 0.5:
                        _toggle(zw, a)
                    gcount += 1
        for d in range(n_dets):
            v = np.uint8(0)
            for i in range(det_offsets[d], det_offsets[d + 1]):
                v ^= rec[det_targets[i]]
            out_dets[s, d] = v
        v = np.uint8(0)
        for i in range(obs_targets.shape[0]):
            v ^= rec[obs_targets[i]]
        out_obs[s] = v
        if keep_rec:
            out_rec[s, :] = rec


@dataclass
class ShotRecord:
    history: SyndromeHistory
    shot_seed: int

    @property
    def observable_flip(self) -> int:
        return self.history.observable_flip


@dataclass
class ShotBatch:
    """Column-stacked shots: ``events[i]`` is shot i's rounds x n_checks matrix."""

    events: np.ndarray
    final_events: np.ndarray
    flips: np.ndarray
    seeds: np.ndarray

    def __len__(self) -> int:
        return self.events.shape[0]

    def record(self, i: int) -> ShotRecord:
        hist = SyndromeHistory(self.events[i], self.final_events[i], int(self.flips[i]))
        return ShotRecord(hist, int(self.seeds[i]))

    def records(self) -> list[ShotRecord]:
        return [self.record(i) for i in range(len(self))]

    def detector_matrix(self) -> np.ndarray:
        n = len(self)
        return np.concatenate([self.events.reshape(n, -1), self.final_events], axis=1)

    def subset(self, idx) -> "ShotBatch":
        return ShotBatch(self.events[idx], self.final_events[idx], self.flips[idx], self.seeds[idx])


def _injection_arrays(circuit: AnnotatedCircuit, inject):
    if not inject:
        e = np.zeros(0, np.int64)
        return e, np.zeros(0, np.int32), np.zeros(0, np.int8)
    items = []
    for pos, qubit, pauli in inject:
        if not 0 <= pos < len(circuit.instructions):
            raise ValueError(f"injection position {pos} out of range")
        items.append((pos, qubit, PAULI_CODE[pauli]))
    items.sort(key=lambda it: it[0])
    pos, q, code = zip(*items)
    return np.array(pos, np.int64), np.array(q, np.int32), np.array(code, np.int8)


def _run(circuit: AnnotatedCircuit, seeds: np.ndarray, inject=None, gauge=False, keep_measurements=False):
    cc = circuit.compiled
    n = seeds.shape[0]
    n_final = len(circuit.final_detectors)
    dets = np.zeros((n, cc.det_offsets.shape[0] - 1), np.uint8)
    obs = np.zeros(n, np.uint8)
    rec = np.zeros((n if keep_measurements else 0, cc.n_meas), np.uint8)
    inj_pos, inj_q, inj_code = _injection_arrays(circuit, inject)
    _sample_kernel(cc.ops, cc.t0, cc.t1, cc.probs, cc.det_offsets, cc.det_targets,
                   cc.obs_targets, cc.n_qubits, cc.n_meas, seeds, inj_pos, inj_q,
                   inj_code, gauge, dets, obs, rec)
    n_hist = dets.shape[1] - n_final
    events = dets[:, :n_hist].reshape(n, circuit.rounds, circuit.n_checks)
    batch = ShotBatch(events, dets[:, n_hist:], obs, seeds)
    return (batch, rec) if keep_measurements else batch


def sample_shot(circuit: AnnotatedCircuit, seed: int, inject=None) -> ShotRecord:
    """Sample one shot.

    ``inject`` is a test hook: a list of ``(instruction_index, qubit, pauli)``
    applied to the frame just before that instruction executes.
    """
    seeds = np.array([seed & ((1 << 64) - 1)], dtype=np.uint64)
    return _run(circuit, seeds, inject=inject).record(0)


def default_threads() -> int:
    return max(1, int(os.environ.get("ADABORT_THREADS", "1")))


def sample_seeds(circuit: AnnotatedCircuit, seeds: np.ndarray, threads: int | None = None,
                 chunk: int = DEFAULT_CHUNK) -> ShotBatch:
    """One shot per entry of ``seeds`` (uint64), returned in the same order."""
    seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
    n = seeds.shape[0]
    if n < 1:
        raise ValueError("need at least one seed")
    threads = threads or default_threads()
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if threads == 1 or len(bounds) == 1:
        parts = [_run(circuit, seeds[lo:hi]) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _run(circuit, seeds[b[0]:b[1]]), bounds))
    if len(parts) == 1:
        return parts[0]
    return ShotBatch(
        np.concatenate([b.events for b in parts]),
        np.concatenate([b.final_events for b in parts]),
        np.concatenate([b.flips for b in parts]),
        seeds,
    )


def sample_arrays(circuit: AnnotatedCircuit, n: int, master_seed: int, start: int = 0,
                  threads: int | None = None, chunk: int = DEFAULT_CHUNK) -> ShotBatch:
    """Shots ``start .. start+n-1`` of the stream defined by ``master_seed``."""
    if n < 1:
        raise ValueError("n must be ≥ 1")
    return sample_seeds(circuit, shot_seeds(master_seed, start, n), threads, chunk)


def sample_batch(circuit: AnnotatedCircuit, n: int, master_seed: int, threads: int | None = None) -> list[ShotRecord]:
    return sample_arrays(circuit, n, master_seed, threads=threads).records()
