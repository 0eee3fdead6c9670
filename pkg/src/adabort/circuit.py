"""Memory-experiment circuits with circuit-level depolarizing noise.

Instructions are per-target, in execution order.  Measurement results are
expressed relative to the all-zero noiseless reference sample, so a
measurement bit of 1 means "flipped by noise".

Detectors come in two groups:

* ``detectors``: ``rounds * n_checks`` history detectors, row-major by
  round.  Round 1 references only the round-1 ancilla outcome (for checks of
  the non-deterministic basis this is the raw outcome against reference 0);
  later rounds XOR the outcome with the same ancilla's previous outcome.
* ``final_detectors``: one per check of the memory basis, comparing the last
  ancilla outcome with the parity of the final data readout on its support.
  These are only available when a shot runs to full depth and are consumed
  by the decoder, never by the abort predictors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .surface_code import CodeLayout

# opcodes shared with the compiled simulator kernels
OP_R, OP_H, OP_CX, OP_DEP1, OP_DEP2, OP_FLIP, OP_M = range(7)
OP_NAMES = ("R", "H", "CX", "DEPOLARIZE1", "DEPOLARIZE2", "FLIP", "M")
NOISE_OPS = (OP_DEP1, OP_DEP2, OP_FLIP)

# convention tag written into dataset headers
ROUND1_CONVENTION = "round1-raw-ref0"


@dataclass(frozen=True)
class Instruction:
    op: int
    targets: tuple[int, ...]
    p: float = 0.0

    def __str__(self) -> str:
        name = OP_NAMES[self.op]
        qs = " ".join(map(str, self.targets))
        if self.op in NOISE_OPS:
            return f"{name}({self.p:g}) {qs}"
        return f"{name} {qs}"


@dataclass
class SyndromeHistory:
    """Detection events of one shot.

    ``events`` is the ``rounds x n_checks`` matrix whose row ``t`` is the
    round-``t`` syndrome vector; ``final_events`` holds the data-readout
    detectors; ``observable_flip`` is the ground-truth logical flip.
    """

    events: np.ndarray
    final_events: np.ndarray
    observable_flip: int

    @property
    def rounds(self) -> int:
        return self.events.shape[0]

    def detector_vector(self) -> np.ndarray:
        return np.concatenate([self.events.reshape(-1), self.final_events])


@dataclass(frozen=True)
class CompiledCircuit:
    ops: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    probs: np.ndarray
    det_offsets: np.ndarray
    det_targets: np.ndarray
    obs_targets: np.ndarray
    n_qubits: int
    n_meas: int
    n_noise_sites: int


@dataclass(frozen=True)
class AnnotatedCircuit:
    layout: CodeLayout
    rounds: int
    error_rate: float
    basis: str
    instructions: tuple[Instruction, ...]
    detectors: tuple[tuple[int, ...], ...]
    final_detectors: tuple[tuple[int, ...], ...]
    final_checks: tuple[int, ...]
    observable: tuple[int, ...]
    n_measurements: int
    round_starts: tuple[int, ...] = ()

    @property
    def n_checks(self) -> int:
        return self.layout.n_checks

    @property
    def n_detectors(self) -> int:
        return len(self.detectors) + len(self.final_detectors)

    def detector_coords(self, index: int) -> tuple[int, int]:
        """(round, check) of a detector; final detectors use round ``rounds + 1``."""
        n_hist = len(self.detectors)
        if index < n_hist:
            return index // self.n_checks + 1, index % self.n_checks
        return self.rounds + 1, self.final_checks[index - n_hist]

    def detector_basis(self) -> np.ndarray:
        """Check basis ('X' or 'Z') of every detector, history then final."""
        per_check = self.layout.check_basis()
        hist = per_check * self.rounds
        final = [per_check[a] for a in self.final_checks]
        return np.array(hist + final)

    def instruction_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ins in self.instructions:
            name = OP_NAMES[ins.op]
            counts[name] = counts.get(name, 0) + 1
        return counts

    def to_text(self) -> str:
        lines = [str(ins) for ins in self.instructions]
        for k, det in enumerate(self.detectors + self.final_detectors):
            t, a = self.detector_coords(k)
            lines.append(f"DETECTOR({t},{a}) " + " ".join(f"rec[{m}]" for m in det))
        lines.append("OBSERVABLE " + " ".join(f"rec[{m}]" for m in self.observable))
        return "\n".join(lines) + "\n"

    @cached_property
    def compiled(self) -> CompiledCircuit:
        n = len(self.instructions)
        ops = np.empty(n, dtype=np.int8)
        t0 = np.zeros(n, dtype=np.int32)
        t1 = np.zeros(n, dtype=np.int32)
        probs = np.zeros(n, dtype=np.float64)
        for k, ins in enumerate(self.instructions):
            ops[k] = ins.op
            t0[k] = ins.targets[0]
            if len(ins.targets) > 1:
                t1[k] = ins.targets[1]
            probs[k] = ins.p
        dets = self.detectors + self.final_detectors
        offsets = np.zeros(len(dets) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(d) for d in dets])
        flat = np.array([m for d in dets for m in d], dtype=np.int64)
        return CompiledCircuit(
            ops=ops,
            t0=t0,
            t1=t1,
            probs=probs,
            det_offsets=offsets,
            det_targets=flat,
            obs_targets=np.array(self.observable, dtype=np.int64),
            n_qubits=self.layout.n_physical,
            n_meas=self.n_measurements,
            n_noise_sites=int(np.isin(ops, NOISE_OPS).sum()),
        )


def build_memory_circuit(layout: CodeLayout, rounds: int, p: float, basis: str = "X") -> AnnotatedCircuit:
    """Compile a ``rounds``-round memory experiment in the given basis."""
    if rounds < 1:
        raise ValueError(f"rounds must be ≥ 1, got {rounds}")
    if not 0.0 <= p < 0.5:
        raise ValueError(f"error rate must lie in [0, 0.5), got {p}")
    if basis not in ("X", "Z"):
        raise ValueError(f"basis must be 'X' or 'Z', got {basis!r}")

    n_data = layout.n_data
    data = range(n_data)
    ancillas = [s.ancilla for s in layout.stabilizers]
    x_ancillas = [s.ancilla for s in layout.x_stabilizers]
    ins: list[Instruction] = []

    # ideal logical preparation
    for q in data:
        ins.append(Instruction(OP_R, (q,)))
    if basis == "X":
        for q in data:
            ins.append(Instruction(OP_H, (q,)))
    for a in ancillas:
        ins.append(Instruction(OP_R, (a,)))

    meas_index: dict[tuple[int, int], int] = {}
    n_meas = 0
    round_starts = []
    for t in range(1, rounds + 1):
        round_starts.append(len(ins))
        for q in data:
            ins.append(Instruction(OP_DEP1, (q,), p))
        for a in x_ancillas:
            ins.append(Instruction(OP_H, (a,)))
        for layer in layout.schedule:
            for anc, q, check in layer:
                pair = (anc, q) if check == "X" else (q, anc)
                ins.append(Instruction(OP_CX, pair))
                ins.append(Instruction(OP_DEP2, pair, p))
        for a in x_ancillas:
            ins.append(Instruction(OP_H, (a,)))
        for a in ancillas:
            ins.append(Instruction(OP_FLIP, (a,), p))
            ins.append(Instruction(OP_M, (a,)))
            meas_index[(t, a)] = n_meas
            n_meas += 1
        for a in ancillas:
            ins.append(Instruction(OP_R, (a,)))

    if basis == "X":
        for q in data:
            ins.append(Instruction(OP_H, (q,)))
    data_meas = {}
    for q in data:
        ins.append(Instruction(OP_FLIP, (q,), p))
        ins.append(Instruction(OP_M, (q,)))
        data_meas[q] = n_meas
        n_meas += 1

    detectors = []
    for t in range(1, rounds + 1):
        for a in ancillas:
            if t == 1:
                detectors.append((meas_index[(1, a)],))
            else:
                detectors.append((meas_index[(t - 1, a)], meas_index[(t, a)]))

    final_detectors, final_checks = [], []
    for stab in layout.stabilizers:
        if stab.basis != basis:
            continue
        recs = [meas_index[(rounds, stab.ancilla)]] + sorted(data_meas[q] for q in stab.support)
        final_detectors.append(tuple(recs))
        final_checks.append(layout.check_index(stab.ancilla))

    support = layout.logical_x_support if basis == "X" else layout.logical_z_support
    observable = tuple(sorted(data_meas[q] for q in support))

    return AnnotatedCircuit(
        layout=layout,
        rounds=rounds,
        error_rate=float(p),
        basis=basis,
        instructions=tuple(ins),
        detectors=tuple(detectors),
        final_detectors=tuple(final_detectors),
        final_checks=tuple(final_checks),
        observable=observable,
        n_measurements=n_meas,
        round_starts=tuple(round_starts),
    )


def detector_round_view(circuit: AnnotatedCircuit, outcomes) -> SyndromeHistory:
    """Turn raw measurement bits (reference 0) into a SyndromeHistory."""
    outcomes = np.asarray(outcomes, dtype=np.uint8).reshape(-1)
    if outcomes.size != circuit.n_measurements:
        raise ValueError(
            f"expected {circuit.n_measurements} measurement bits, got {outcomes.size}"
        )
    hist = np.array(
        [np.bitwise_xor.reduce(outcomes[list(det)]) for det in circuit.detectors], dtype=np.uint8
    ).reshape(circuit.rounds, circuit.n_checks)
    final = np.array(
        [np.bitwise_xor.reduce(outcomes[list(det)]) for det in circuit.final_detectors], dtype=np.uint8
    )
    flip = int(np.bitwise_xor.reduce(outcomes[list(circuit.observable)]))
    return SyndromeHistory(hist, final, flip)
