import numpy as np
import pytest

from adabort.circuit import ROUND1_CONVENTION, build_memory_circuit, detector_round_view
from adabort.frame_sim import _run
from adabort.rng import shot_seeds
from adabort.surface_code import build_layout


def expected_counts(d, T, basis):
    lay = build_layout(d)
    n, C = lay.n_data, lay.n_checks
    nx = len(lay.x_stabilizers)
    cx = sum(len(s.support) for s in lay.stabilizers)
    h_data = 2 * n if basis == "X" else 0
    return {
        "R": n + C + T * C,
        "H": h_data + 2 * nx * T,
        "CX": cx * T,
        "DEPOLARIZE2": cx * T,
        "DEPOLARIZE1": n * T,
        "FLIP": C * T + n,
        "M": C * T + n,
    }


@pytest.mark.parametrize("d,T,basis", [(3, 3, "X"), (3, 1, "Z"), (5, 5, "X"), (5, 2, "Z")])
def test_instruction_counts(d, T, basis):
    c = build_memory_circuit(build_layout(d), T, 0.001, basis)
    counts = c.instruction_counts()
    want = expected_counts(d, T, basis)
    assert {k: counts.get(k, 0) for k in want} == want
    assert c.n_measurements == want["M"]
    assert len(c.detectors) == T * (d * d - 1)
    assert len(c.final_detectors) == (d * d - 1) // 2
    assert len(c.observable) == d
    assert len(c.round_starts) == T


def test_detector_structure(circuit3):
    C = circuit3.n_checks
    for k, det in enumerate(circuit3.detectors):
        t, a = circuit3.detector_coords(k)
        assert len(det) == (1 if t == 1 else 2)
        assert (t, a) == (k // C + 1, k % C)
    basis = circuit3.detector_basis()
    assert len(basis) == circuit3.n_detectors
    assert set(basis[len(circuit3.detectors):]) == {"X"}


def test_noise_probabilities(circuit3):
    noisy = [ins for ins in circuit3.instructions if ins.op in (3, 4, 5)]
    assert noisy and all(ins.p == 0.01 for ins in noisy)


def test_text_format(circuit3):
    text = circuit3.to_text()
    lines = text.splitlines()
    assert lines[0] == "R 0"
    assert "DEPOLARIZE1(0.01) 0" in lines
    assert sum(line.startswith("DETECTOR(") for line in lines) == circuit3.n_detectors
    assert lines[-1].startswith("OBSERVABLE rec[")
    assert text == circuit3.to_text()


@pytest.mark.parametrize("kwargs", [dict(rounds=0), dict(p=0.5), dict(p=-0.1), dict(basis="Y")])
def test_invalid_arguments(layout3, kwargs):
    args = dict(rounds=3, p=0.01, basis="X") | kwargs
    with pytest.raises(ValueError):
        build_memory_circuit(layout3, args["rounds"], args["p"], args["basis"])


def test_round_view_matches_kernel_detectors(circuit3):
    batch, rec = _run(circuit3, shot_seeds(5, 0, 200), keep_measurements=True)
    for i in range(200):
        view = detector_round_view(circuit3, rec[i])
        assert np.array_equal(view.events, batch.events[i])
        assert np.array_equal(view.final_events, batch.final_events[i])
        assert view.observable_flip == batch.flips[i]


def test_convention_tag():
    assert ROUND1_CONVENTION == "round1-raw-ref0"
