"""Matching decoder: error-mechanism graph plus minimum-weight perfect matching.

Graph construction injects every component of every noise site into its own
frame column and propagates all columns through the circuit at once
(vectorised over mechanisms), then reads off which detectors and whether the
observable each mechanism flips.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .blossom import WEIGHT_SCALE, max_weight_matching
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
    build_memory_circuit,
)

# (x, z) bits of the Paulis I, X, Y, Z
_PAULI_XZ = ((0, 0), (1, 0), (1, 1), (0, 1))


class DecompositionError(ValueError):
    """An error mechanism could not be expressed with graph edges."""


@dataclass(frozen=True)
class Mechanism:
    probability: float
    detectors: tuple[int, ...]
    flips_observable: bool
    source: tuple[int, str]  # (instruction index, pauli label)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int  # == boundary for boundary edges
    weight: float
    frame_bit: int
    probability: float


@dataclass
class MatchingResult:
    pairs: list[tuple[int, int]]
    total_weight: float
    predicted_flip: int


NOMINAL_P = 1e-3


def merge_probability(p1: float, p2: float) -> float:
    """Probability that exactly one of two independent mechanisms fires."""
    return p1 * (1 - p2) + p2 * (1 - p1)


def edge_weight(p: float) -> float:
    return math.log((1 - p) / p)


def propagate_mechanisms(circuit: AnnotatedCircuit):
    """Detector signature and observable effect of every single-fault mechanism."""
    cc = circuit.compiled
    cols = []  # (instruction, [(qubit, pauli code)], probability, label)
    for k, op in enumerate(cc.ops):
        p = float(cc.probs[k])
        a, b = int(cc.t0[k]), int(cc.t1[k])
        if op == OP_DEP1:
            for code, name in ((1, "X"), (2, "Y"), (3, "Z")):
                cols.append((k, ((a, code),), p / 3, name))
        elif op == OP_DEP2:
            for c in range(1, 16):
                name = "IXYZ"[c >> 2] + "IXYZ"[c & 3]
                cols.append((k, ((a, c >> 2), (b, c & 3)), p / 15, name))
        elif op == OP_FLIP:
            cols.append((k, ((a, -1),), p, "M"))

    n_cols = len(cols)
    x = np.zeros((cc.n_qubits, n_cols), dtype=bool)
    z = np.zeros_like(x)
    pend = np.zeros_like(x)
    rec = np.zeros((cc.n_meas, n_cols), dtype=bool)
    starts = defaultdict(list)
    for c, (k, paulis, _, _) in enumerate(cols):
        starts[k].append((c, paulis))

    m = 0
    for k, op in enumerate(cc.ops):
        a = int(cc.t0[k])
        for c, paulis in starts.get(k, ()):
            for q, code in paulis:
                if code < 0:
                    pend[q, c] ^= True
                else:
                    xb, zb = _PAULI_XZ[code]
                    x[q, c] ^= bool(xb)
                    z[q, c] ^= bool(zb)
        if op == OP_CX:
            b = int(cc.t1[k])
            x[b] ^= x[a]
            z[a] ^= z[b]
        elif op == OP_H:
            x[a], z[a] = z[a].copy(), x[a].copy()
        elif op == OP_R:
            x[a] = False
            z[a] = False
        elif op == OP_M:
            rec[m] = x[a] ^ pend[a]
            pend[a] = False
            m += 1

    offsets, targets = cc.det_offsets, cc.det_targets
    dets = np.zeros((len(offsets) - 1, n_cols), dtype=bool)
    for d in range(len(offsets) - 1):
        dets[d] = np.bitwise_xor.reduce(rec[targets[offsets[d]:offsets[d + 1]]], axis=0)
    obs = np.bitwise_xor.reduce(rec[cc.obs_targets], axis=0)

    fired = defaultdict(list)
    for d, c in zip(*np.nonzero(dets)):
        fired[c].append(int(d))
    return [
        Mechanism(prob, tuple(fired.get(c, ())), bool(obs[c]), (k, label))
        for c, (k, _, prob, label) in enumerate(cols)
    ]


@dataclass
class DecodingGraph:
    n_detectors: int
    edges: list[Edge]
    detector_basis: np.ndarray
    decomposed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)
    max_cached_rows: int = 1 << 14

    def __post_init__(self):
        n = self.n_detectors + 1
        u = np.array([e.u for e in self.edges])
        v = np.array([e.v for e in self.edges])
        w = np.array([e.weight for e in self.edges])
        self.matrix = csr_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        self.frame = {}
        for e in self.edges:
            self.frame[(e.u, e.v)] = e.frame_bit
            self.frame[(e.v, e.u)] = e.frame_bit
        # components ignoring the boundary; matching never crosses them except via the boundary
        inner = self.matrix[: self.n_detectors, : self.n_detectors]
        _, comp = connected_components(inner, directed=False)
        relevant = np.zeros(comp.max() + 1 if comp.size else 0, dtype=bool)
        for e in self.edges:
            if e.frame_bit:
                relevant[comp[e.u]] = True
        self.component = comp
        self.observable_relevant = relevant[comp]

    @property
    def boundary(self) -> int:
        return self.n_detectors

    def shortest_paths(self, source: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and path frame parities from ``source`` to every node."""
        row = self._cache.get(source)
        if row is not None:
            return row
        dist, pred = dijkstra(self.matrix, directed=False, indices=source, return_predecessors=True)
        parity = np.zeros(dist.shape[0], dtype=np.uint8)
        order = np.argsort(dist, kind="stable")
        pred_l = pred.tolist()
        frame = self.frame
        par = [0] * dist.shape[0]
        for v in order.tolist():
            u = pred_l[v]
            if u >= 0:
                par[v] = par[u] ^ frame[(u, v)]
        parity[:] = par
        if len(self._cache) < self.max_cached_rows:
            self._cache[source] = (dist, parity)
        return dist, parity

    def dump(self) -> str:
        lines = [f"nodes {self.n_detectors} boundary {self.boundary}"]
        for e in self.edges:
            v = "B" if e.v == self.boundary else str(e.v)
            lines.append(f"edge {e.u} {v} {e.weight:.12g} {e.frame_bit} {e.probability:.12g}")
        return "\n".join(lines) + "\n"


def _split_by_basis(mech: Mechanism, basis_of, memory_basis: str):
    """Split a mechanism into per-check-basis parts; the observable flip rides with the memory basis."""
    parts = defaultdict(list)
    for d in mech.detectors:
        parts[basis_of[d]].append(d)
    out = []
    for b, dets in sorted(parts.items()):
        out.append((tuple(dets), mech.flips_observable and b == memory_basis))
    if mech.flips_observable and memory_basis not in parts:
        raise DecompositionError(
            f"mechanism {mech.source} flips the observable without touching any {memory_basis} detector"
        )
    return out


def _edge_key(dets, boundary):
    return (dets[0], boundary) if len(dets) == 1 else (min(dets), max(dets))


def _cover(dets, frame_target, known, boundary):
    """Partition ``dets`` into known 1- or 2-detector edges with the required frame parity."""
    if not dets:
        return [] if frame_target == 0 else None
    u, rest = dets[0], dets[1:]
    options = []
    if (u, boundary) in known:
        options.append(((u, boundary), rest))
    for v in rest:
        key = (min(u, v), max(u, v))
        if key in known:
            options.append((key, tuple(x for x in rest if x != v)))
    for key, remaining in options:
        sub = _cover(remaining, frame_target ^ known[key], known, boundary)
        if sub is not None:
            return [key] + sub
    return None


def build_decoding_graph(circuit: AnnotatedCircuit) -> DecodingGraph:
    """Weighted matching graph from the circuit's single-fault mechanisms.

    A noiseless circuit never fires a detector; its graph is built with
    weights from ``NOMINAL_P`` so the same decoding code paths apply.
    """
    if circuit.error_rate <= 0:
        circuit = build_memory_circuit(circuit.layout, circuit.rounds, NOMINAL_P, circuit.basis)
    mechanisms = propagate_mechanisms(circuit)
    boundary = circuit.n_detectors
    basis_of = circuit.detector_basis()

    simple: list[tuple[tuple[int, int], bool, float]] = []
    complex_parts: list[tuple[tuple[int, ...], bool, float, Mechanism]] = []
    for mech in mechanisms:
        if not mech.detectors:
            if mech.flips_observable:
                raise DecompositionError(f"undetectable logical mechanism at {mech.source}")
            continue
        for dets, flips in _split_by_basis(mech, basis_of, circuit.basis):
            if len(dets) <= 2:
                simple.append((_edge_key(dets, boundary), flips, mech.probability))
            else:
                complex_parts.append((dets, flips, mech.probability, mech))

    # parallel mechanisms: p merges by XOR of independent events, frame goes with the heavier side
    mass = defaultdict(lambda: [0.0, 0.0])
    for key, flips, p in simple:
        m = mass[key]
        m[int(flips)] = merge_probability(m[int(flips)], p)
    known = {key: int(m[1] > m[0]) for key, m in mass.items()}

    decomposed = 0
    for dets, flips, p, mech in complex_parts:
        cover = _cover(tuple(sorted(dets)), int(flips), known, boundary)
        if cover is None:
            raise DecompositionError(
                f"cannot decompose mechanism {mech.source} with detectors {dets} into graph edges"
            )
        decomposed += 1
        for key in cover:
            m = mass[key]
            m[known[key]] = merge_probability(m[known[key]], p)

    edges = []
    for key in sorted(mass):
        m0, m1 = mass[key]
        p = merge_probability(m0, m1)
        frame = int(m1 > m0)
        edges.append(Edge(key[0], key[1], edge_weight(p), frame, p))
    return DecodingGraph(boundary, edges, basis_of, decomposed)


def _fired_indices(events) -> np.ndarray:
    if isinstance(events, SyndromeHistory):
        vec = events.detector_vector()
    else:
        vec = np.asarray(events).reshape(-1)
    return np.flatnonzero(vec)


def _match_clusters(k: int, iu, ju, w) -> list[int]:
    """Maximum-savings matching, solved per connected cluster of positive-savings pairs."""
    root = list(range(k))

    def find(a):
        while root[a] != a:
            root[a] = root[root[a]]
            a = root[a]
        return a

    for a, b in zip(iu, ju):
        ra, rb = find(a), find(b)
        if ra != rb:
            root[max(ra, rb)] = min(ra, rb)
    groups = defaultdict(list)
    for a, b, x in zip(iu, ju, w):
        groups[find(a)].append((a, b, x))

    mate = [-1] * k
    for edges in groups.values():
        if len(edges) == 1:
            a, b, _ = edges[0]
            mate[a], mate[b] = b, a
            continue
        nodes = sorted({v for a, b, _ in edges for v in (a, b)})
        local = {v: n for n, v in enumerate(nodes)}
        sub = max_weight_matching([(local[a], local[b], x) for a, b, x in edges])
        for n, m in enumerate(sub):
            if m >= 0:
                mate[nodes[n]] = nodes[m]
    return mate


def decode(graph: DecodingGraph, events, observable_only: bool = False) -> MatchingResult:
    """Minimum-weight perfect matching of the fired detectors.

    Each fired detector pairs with another or with the boundary.  Pairing
    ``i`` with ``j`` saves ``d(i, B) + d(j, B) - d(i, j)`` over sending both to
    the boundary, so the optimum is a maximum-savings matching restricted to
    pairs with positive savings, solved independently on each connected
    cluster of such pairs.  Costs are compared after scaling to integers
    (2**-32 resolution); remaining ties fall to the blossom's edge order,
    which is fixed by detector index, so decoding is deterministic.

    With ``observable_only`` detectors in components that cannot flip the
    observable are skipped, which leaves ``predicted_flip`` unchanged.
    """
    fired = _fired_indices(events)
    if fired.size and fired.max() >= graph.n_detectors:
        raise ValueError("event vector longer than the graph's detector set")
    if observable_only:
        fired = fired[graph.observable_relevant[fired]]
    k = fired.size
    if k == 0:
        return MatchingResult([], 0.0, 0)

    B = graph.boundary
    rows = [graph.shortest_paths(int(f)) for f in fired]
    dist = np.array([r[0][fired] for r in rows])
    par = np.array([r[1][fired] for r in rows])
    bdist = np.array([r[0][B] for r in rows])
    bpar = np.array([r[1][B] for r in rows])
    if not np.all(np.isfinite(bdist)):
        raise ValueError("fired detector cannot reach the boundary")

    # Every matching costs sum(bdist) minus the savings of its detector pairs,
    # so only pairs cheaper than two boundary matches need to be offered.
    sb = np.rint(bdist * WEIGHT_SCALE).astype(np.int64)
    sd = np.where(np.isfinite(dist), np.rint(np.minimum(dist, 1e9) * WEIGHT_SCALE), 1 << 62).astype(np.int64)
    savings = sb[:, None] + sb[None, :] - sd
    iu, ju = np.nonzero(np.triu(savings > 0, 1))
    mate = [-1] * k
    if iu.size:
        mate = _match_clusters(k, iu.tolist(), ju.tolist(), savings[iu, ju].tolist())

    pairs: list[tuple[int, int]] = []
    total = 0.0
    flip = 0
    for i in range(k):
        j = mate[i]
        if j < 0:
            pairs.append((int(fired[i]), B))
            total += bdist[i]
            flip ^= int(bpar[i])
        elif i < j:
            pairs.append((int(fired[i]), int(fired[j])))
            total += dist[i, j]
            flip ^= int(par[i, j])
    pairs.sort()
    return MatchingResult(pairs, float(total), flip)


def decode_success(graph: DecodingGraph, record) -> int:
    """1 iff the decoder's predicted flip equals the true observable flip."""
    hist = record.history if hasattr(record, "history") else record
    pred = decode(graph, hist, observable_only=True).predicted_flip
    return int(pred == hist.observable_flip)


def predict_flips(graph: DecodingGraph, detector_matrix: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Predicted observable flips for many shots (rows of detector bits).

    Identical relevant syndromes are decoded once; ``cache`` may be shared
    across calls on the same graph.
    """
    det = np.asarray(detector_matrix, dtype=bool)[:, graph.observable_relevant]
    relevant_ids = np.flatnonzero(graph.observable_relevant)
    out = np.zeros(det.shape[0], dtype=np.uint8)
    cache = {} if cache is None else cache
    nonzero = np.flatnonzero(det.any(axis=1))
    packed = np.packbits(det[nonzero], axis=1)
    for row, key in zip(nonzero.tolist(), map(bytes, packed)):
        hit = cache.get(key)
        if hit is None:
            fired = relevant_ids[np.flatnonzero(det[row])]
            vec = np.zeros(graph.n_detectors, dtype=np.uint8)
            vec[fired] = 1
            hit = decode(graph, vec).predicted_flip
            cache[key] = hit
        out[row] = hit
    return out
