"""Oracle checks bundled with the command line (``adabort selftest``).

Each check compares the implementation against something computed
independently: exhaustive matching, central finite differences, and
detector sets predicted from stabilizer supports alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import nn
from .circuit import OP_FLIP, build_memory_circuit
from .frame_sim import sample_arrays, sample_shot
from .mwpm import build_decoding_graph, decode
from .predictor import Predictor, cnn1d, two_head_mlp
from .surface_code import build_layout


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# ------------------------------------------------------------ single errors


def injection_cases(d: int = 3, rounds: int = 3, basis: str = "X"):
    """Single Paulis with the detectors and observable effect implied by the stabilizers.

    Yields ``(instruction_index, qubit, pauli, fired_detectors, flip)``.
    Data errors are placed at the start of each round; measurement errors are
    X flips on an ancilla right before its readout.
    """
    layout = build_layout(d)
    circuit = build_memory_circuit(layout, rounds, 0.0, basis)
    C = layout.n_checks
    final_pos = {a: k for k, a in enumerate(circuit.final_checks)}
    logical = layout.logical_x_support if basis == "X" else layout.logical_z_support
    n_hist = rounds * C
    for t in range(1, rounds + 1):
        pos = circuit.round_starts[t - 1]
        for q in range(layout.n_data):
            for pauli in "XZY":
                fired = []
                for s in layout.stabilizers:
                    # a Pauli anticommutes with a check of the other type
                    if q in s.support and (pauli == "Y" or pauli != s.basis):
                        fired.append((t - 1) * C + layout.check_index(s.ancilla))
                # the readout measures the memory-basis logical, flipped by the other Pauli type
                flip = int(q in logical and (pauli == "Y" or pauli != basis))
                yield pos, q, pauli, sorted(fired), flip
    flips = [k for k, ins in enumerate(circuit.instructions) if ins.op == OP_FLIP]
    anc = [k for k in flips if circuit.instructions[k].targets[0] >= layout.n_data]
    for j, pos in enumerate(anc):
        t, a = j // C + 1, j % C
        fired = [(t - 1) * C + a]
        if t < rounds:
            fired.append(t * C + a)
        elif a in final_pos:
            fired.append(n_hist + final_pos[a])
        yield pos, circuit.instructions[pos].targets[0], "X", fired, 0


def check_single_errors(d: int = 3, rounds: int = 3) -> CheckResult:
    bad, n = [], 0
    for basis in ("X", "Z"):
        circuit = build_memory_circuit(build_layout(d), rounds, 0.0, basis)
        for pos, q, pauli, fired, flip in injection_cases(d, rounds, basis):
            hist = sample_shot(circuit, 0, inject=[(pos, q, pauli)]).history
            got = np.flatnonzero(hist.detector_vector()).tolist()
            n += 1
            if got != fired or hist.observable_flip != flip:
                bad.append((basis, pos, q, pauli))
    return CheckResult("single-error propagation", not bad, f"{n - len(bad)}/{n} injections match" + (f", first mismatch {bad[0]}" if bad else ""))


# ---------------------------------------------------------------- matching


def brute_force_min_weight(dist: np.ndarray, bdist: np.ndarray) -> float:
    """Exhaustive minimum over pairings where any node may go to the boundary."""
    k = len(bdist)

    @lru_cache(maxsize=None)
    def best(mask: int) -> float:
        if mask == 0:
            return 0.0
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        out = bdist[i] + best(rest)
        m = rest
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            out = min(out, dist[i, j] + best(rest & ~(1 << j)))
        return out

    return best((1 << k) - 1)


def matching_instances(n: int, seed: int, max_fired: int = 12, distances=(3, 5), p: float = 0.01):
    """Random detector subsets of up to ``max_fired`` nodes on real decoding graphs."""
    rng = np.random.default_rng(seed)
    graphs = {d: build_decoding_graph(build_memory_circuit(build_layout(d), d, p)) for d in distances}
    for _ in range(n):
        d = int(rng.choice(distances))
        g = graphs[d]
        k = int(rng.integers(1, max_fired + 1))
        fired = np.sort(rng.choice(g.n_detectors, size=k, replace=False))
        yield g, fired


def check_matching(n: int = 200, seed: int = 0) -> CheckResult:
    worst = 0.0
    for g, fired in matching_instances(n, seed):
        vec = np.zeros(g.n_detectors, np.uint8)
        vec[fired] = 1
        got = decode(g, vec).total_weight
        rows = [g.shortest_paths(int(f)) for f in fired]
        dist = np.array([r[0][fired] for r in rows])
        bdist = np.array([r[0][g.boundary] for r in rows])
        want = brute_force_min_weight(dist, bdist)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    return CheckResult("matching optimality", worst < 1e-9, f"{n} instances, worst relative gap {worst:.2e}")


# --------------------------------------------------------------- gradients


def _loss(model: Predictor, x, y, w) -> float:
    return nn.bce_with_logits(model.logits(x, train=True), y, w)[0]


def gradient_errors(model: Predictor, n: int = 12, seed: int = 0, per_tensor: int = 24,
                    h: float = 1e-6) -> list[float]:
    """Relative error ``|a - f| / (|a| + |f|)`` per parameter tensor, on a random subset of entries."""
    rng = np.random.default_rng(seed)
    T, C = model.input_shape
    x = rng.integers(-1, 2, size=(n, T, C)).astype(np.int8)
    y = rng.integers(0, 2, size=(n, model.n_outputs)).astype(np.float64)
    w = rng.uniform(0.5, 2.0, size=y.shape)
    buffers = [b.copy() for b in model.buffers]

    def restore():
        # training-mode forwards update running statistics; they never feed the loss
        for b, s in zip(model.buffers, buffers):
            b[...] = s

    z = model.logits(x, train=True)
    _, dz = nn.bce_with_logits(z, y, w)
    model.backward(dz)
    analytic = [g.copy() for g in model.grads]
    errors = []
    for p, a in zip(model.params, analytic):
        flat, aflat = p.reshape(-1), a.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = _loss(model, x, y, w)
            flat[i] = old - h
            down = _loss(model, x, y, w)
            flat[i] = old
            num[k] = (up - down) / (2 * h)
        restore()
        an = aflat[idx]
        denom = np.linalg.norm(an) + np.linalg.norm(num)
        errors.append(float(np.linalg.norm(an - num) / denom) if denom > 0 else 0.0)
    return errors


def check_gradients() -> CheckResult:
    worst = {}
    for name, model in (("cnn1d", cnn1d(3, 8, seed=1)), ("two_head_mlp", two_head_mlp(8, seed=1, hide_lookahead=False))):
        worst[name] = max(gradient_errors(model))
    ok = all(v < 1e-4 for v in worst.values())
    return CheckResult("gradient check", ok, ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()))


# ----------------------------------------------------------- determinism


def check_thread_determinism() -> CheckResult:
    circuit = build_memory_circuit(build_layout(3), 3, 0.01)
    a = sample_arrays(circuit, 3000, 7, threads=1)
    b = sample_arrays(circuit, 3000, 7, threads=3)
    same = np.array_equal(a.events, b.events) and np.array_equal(a.flips, b.flips)
    return CheckResult("sampling determinism", same, "threads=1 vs threads=3 on 3000 shots")


def run_all(quick: bool = False) -> list[CheckResult]:
    return [
        check_single_errors(),
        check_matching(50 if quick else 200),
        check_gradients(),
        check_thread_determinism(),
    ]
