import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adabort.circuit import SyndromeHistory, build_memory_circuit
from adabort.frame_sim import sample_arrays, sample_shot
from adabort.mwpm import (
    build_decoding_graph,
    decode,
    decode_success,
    edge_weight,
    merge_probability,
    predict_flips,
    propagate_mechanisms,
)
from adabort.selftest import brute_force_min_weight
from adabort.surface_code import build_layout


@given(st.floats(0, 0.5), st.floats(0, 0.5))
def test_merge_probability(p1, p2):
    m = merge_probability(p1, p2)
    assert m == pytest.approx(p1 * (1 - p2) + p2 * (1 - p1))
    # XOR of two independent bits: 1 - 2m = (1 - 2 p1)(1 - 2 p2)
    assert 1 - 2 * m == pytest.approx((1 - 2 * p1) * (1 - 2 * p2), abs=1e-12)
    assert merge_probability(p1, p2) == pytest.approx(merge_probability(p2, p1))


def test_edge_weight():
    assert edge_weight(0.01) == pytest.approx(math.log(99))
    assert edge_weight(0.5) == 0.0


def test_graph_shape(circuit3, graph3):
    basis = circuit3.detector_basis()
    assert graph3.n_detectors == circuit3.n_detectors == 24 + 4
    assert graph3.decomposed == 0
    for e in graph3.edges:
        assert e.u < e.v
        assert 0 < e.probability < 0.5
        assert e.weight == pytest.approx(edge_weight(e.probability))
        if e.v != graph3.boundary:
            assert basis[e.u] == basis[e.v], "edges never join X and Z detectors"
    # only memory-basis (X) detectors can carry the observable
    assert all(basis[e.u] == "X" for e in graph3.edges if e.frame_bit)
    assert graph3.observable_relevant.sum() == (basis == "X").sum()


def test_graph_edges_merge_mechanisms(circuit3, graph3):
    # every graphlike mechanism's probability is accounted for in its edge
    acc = {}
    for m in propagate_mechanisms(circuit3):
        if 1 <= len(m.detectors) <= 2 and m.probability > 0:
            basis = circuit3.detector_basis()
            if len(m.detectors) == 2 and basis[m.detectors[0]] != basis[m.detectors[1]]:
                continue
            key = tuple(m.detectors) if len(m.detectors) == 2 else (m.detectors[0], graph3.boundary)
            acc[key] = merge_probability(acc.get(key, 0.0), m.probability)
    probs = {(e.u, e.v): e.probability for e in graph3.edges}
    for key, p in acc.items():
        assert probs[key] >= p - 1e-15


def test_dump_format(graph3):
    lines = graph3.dump().splitlines()
    assert lines[0] == f"nodes {graph3.n_detectors} boundary {graph3.boundary}"
    assert len(lines) == 1 + len(graph3.edges)
    for line, e in zip(lines[1:], graph3.edges):
        tag, u, v, w, bit, p = line.split()
        assert tag == "edge" and int(u) == e.u
        assert (v == "B") == (e.v == graph3.boundary)
        assert float(w) == pytest.approx(e.weight) and int(bit) == e.frame_bit


def test_noiseless_circuit_gets_nominal_graph(layout3):
    from adabort.mwpm import NOMINAL_P

    g = build_decoding_graph(build_memory_circuit(layout3, 3, 0.0))
    ref = build_decoding_graph(build_memory_circuit(layout3, 3, NOMINAL_P))
    assert g.dump() == ref.dump()


def test_empty_syndrome(graph3):
    r = decode(graph3, np.zeros(graph3.n_detectors, np.uint8))
    assert r.pairs == [] and r.total_weight == 0.0 and r.predicted_flip == 0


def test_every_single_fault_is_corrected(circuit3, graph3):
    for m in propagate_mechanisms(circuit3):
        vec = np.zeros(graph3.n_detectors, np.uint8)
        vec[list(m.detectors)] = 1
        assert decode(graph3, vec).predicted_flip == int(m.flips_observable), m.source


def test_fault_pairs_at_d5():
    # With non-uniform weights a two-fault syndrome can have a cheaper explanation
    # of the opposite logical class; a miscorrection is allowed only in that case.
    c = build_memory_circuit(build_layout(5), 5, 0.01)
    g = build_decoding_graph(c)
    mechs = [m for m in propagate_mechanisms(c) if m.detectors]
    def single(m):
        vec = np.zeros(g.n_detectors, np.uint8)
        vec[list(m.detectors)] = 1
        return decode(g, vec).total_weight

    rng = np.random.default_rng(4)
    wrong = 0
    for _ in range(300):
        pair = [mechs[k] for k in rng.choice(len(mechs), 2, replace=False)]
        vec = np.zeros(g.n_detectors, np.uint8)
        flip = 0
        for m in pair:
            vec[list(m.detectors)] ^= 1
            flip ^= int(m.flips_observable)
        r = decode(g, vec)
        upper = sum(single(m) for m in pair)
        assert r.total_weight <= upper + 1e-9
        if r.predicted_flip != flip:
            wrong += 1
            assert r.total_weight < upper - 1e-9
    assert wrong <= 3


@given(st.integers(0, 2**31), st.integers(1, 10))
@settings(max_examples=60, deadline=None)
def test_decode_is_minimum_weight(graph3, seed, k):
    rng = np.random.default_rng(seed)
    fired = np.sort(rng.choice(graph3.n_detectors, size=k, replace=False))
    vec = np.zeros(graph3.n_detectors, np.uint8)
    vec[fired] = 1
    r = decode(graph3, vec)
    rows = [graph3.shortest_paths(int(f)) for f in fired]
    dist = np.array([row[0][fired] for row in rows])
    bdist = np.array([row[0][graph3.boundary] for row in rows])
    assert r.total_weight == pytest.approx(brute_force_min_weight(dist, bdist), rel=1e-9)
    covered = [v for pair in r.pairs for v in pair if v != graph3.boundary]
    assert sorted(covered) == fired.tolist()


def test_decode_success_logical_chain(circuit3, graph3):
    lay = circuit3.layout
    inject = [(circuit3.round_starts[1], q, "Z") for q in lay.logical_z_support]
    quiet = build_memory_circuit(lay, 3, 0.0)
    rec = sample_shot(quiet, 0, inject=inject)
    assert not rec.history.detector_vector().any()
    assert rec.observable_flip == 1
    assert decode_success(graph3, rec) == 0
    single = sample_shot(quiet, 0, inject=inject[:1])
    assert decode_success(graph3, single) == 1


def test_accepts_history_objects(graph3, circuit3):
    b = sample_arrays(circuit3, 50, 2)
    for i in range(50):
        h = SyndromeHistory(b.events[i], b.final_events[i], int(b.flips[i]))
        assert decode(graph3, h).predicted_flip == decode(graph3, b.detector_matrix()[i]).predicted_flip


def test_predict_flips_matches_decode(graph3, circuit3):
    b = sample_arrays(circuit3, 400, 9)
    dm = b.detector_matrix()
    cache = {}
    got = predict_flips(graph3, dm, cache)
    want = [decode(graph3, row).predicted_flip for row in dm]
    assert got.tolist() == want
    assert predict_flips(graph3, dm, cache).tolist() == want


def test_oversized_vector_rejected(graph3):
    with pytest.raises(ValueError):
        decode(graph3, np.ones(graph3.n_detectors + 1, np.uint8))


def test_observable_only_keeps_prediction(graph5):
    c = build_memory_circuit(build_layout(5), 5, 0.01)
    b = sample_arrays(c, 200, 3)
    for row in b.detector_matrix():
        assert decode(graph5, row).predicted_flip == decode(graph5, row, observable_only=True).predicted_flip


def test_low_noise_beats_high_noise():
    # decoding reduces logical errors well below the raw flip rate at low p
    c = build_memory_circuit(build_layout(3), 3, 0.002)
    g = build_decoding_graph(c)
    b = sample_arrays(c, 20000, 1)
    fails = (predict_flips(g, b.detector_matrix()) != b.flips).mean()
    assert fails < 0.5 * b.flips.mean()
