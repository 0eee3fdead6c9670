import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adabort.frame_sim import sample_arrays
from adabort.policies import (
    EFFICIENCY_COLUMNS,
    CostModel,
    EfficiencyReport,
    PolicyConfig,
    ReplaySet,
    ShotOutcome,
    adabort_scores,
    c_grid,
    efficiency,
    efficiency_csv,
    efficiency_row,
    osla_scores,
    replay_adabort,
    replay_fd,
    replay_osla,
    replay_set,
    run_adabort,
    run_fd,
    run_osla,
    run_policy,
    stream_rounds,
    sweep_c,
    sweep_theta,
    theta_grid,
)
from adabort.predictor import PAD, cnn1d, two_head_mlp

COST = CostModel()


class Const:
    """Stub predictor returning fixed failure probabilities."""

    def __init__(self, *values):
        self.values = np.array(values, dtype=float)

    def p_fail(self, x):
        return np.tile(self.values, (np.asarray(x).shape[0], 1))


class Sequence:
    """Stub returning the t-th value for a prefix with t revealed rounds."""

    def __init__(self, values):
        self.values = values

    def p_fail(self, x):
        x = np.asarray(x)
        t = (x[:, :, 0] != PAD).sum(axis=1)
        return np.array([[self.values[k - 1]] for k in t])


@pytest.fixture(scope="module")
def shots3(circuit3):
    return sample_arrays(circuit3, 300, 17)


def test_cost_model_constants():
    assert COST.aborted(1) == pytest.approx(1.2)
    assert COST.success(3) == pytest.approx(2.1)
    assert COST.failure(3) == pytest.approx(3.1)
    with pytest.raises(ValueError):
        CostModel(M=-1)


def test_efficiency_examples():
    r = efficiency([ShotOutcome("decoded_success", 2.1), ShotOutcome("aborted", 1.2, 1)])
    assert r.S_rate == 1.0
    assert r.eta_dec == pytest.approx(1 / 1.65, rel=1e-12)
    r = efficiency([ShotOutcome("decoded_success", COST.success(3))] * 10)
    assert r.eta_dec == pytest.approx(1 / 2.1, rel=1e-12)
    outs = [ShotOutcome("decoded_success", COST.success(3))] * 90 + [ShotOutcome("decoded_failure", COST.failure(3))] * 10
    r = efficiency(outs)
    assert (r.N, r.N_s, r.N_f, r.N_a) == (100, 90, 10, 0)
    assert r.total_time == pytest.approx(220, rel=1e-12)
    assert r.eta_dec == pytest.approx(0.9 / 2.2, rel=1e-12)


def test_degenerate_all_aborted():
    r = efficiency([ShotOutcome("aborted", 1.2, 1)] * 4)
    assert r.S_rate == 0.0 and r.eta_dec == 0.0 and r.N_a == 4
    with pytest.raises(ValueError):
        efficiency([])


def test_fd_time_is_deterministic(graph3, shots3):
    outs = [run_fd(rec, graph3, COST) for rec in shots3.records()]
    assert all(o.abort_round is None for o in outs)
    r = efficiency(outs)
    assert r.N_a == 0
    assert r.total_time == pytest.approx(300 * 3 * 0.7 + r.N_f * 1.0)


def test_osla_stubs(graph3, shots3):
    rec = shots3.record(0)
    assert run_osla(rec, Const(0.0, 0.0), graph3, COST, -0.01) == run_fd(rec, graph3, COST)
    out = run_osla(rec, Const(0.9, 0.95), graph3, COST, -0.01)
    assert out.status == "aborted" and out.abort_round == 1
    assert out.time_cost == pytest.approx(1.2)
    with pytest.raises(ValueError):
        run_osla(rec, Const(0, 0), graph3, COST, 0.01)


def test_adabort_stubs(graph3, shots3):
    rec = shots3.record(0)
    assert run_adabort(rec, Const(0.3), graph3, COST, 0.999) == run_fd(rec, graph3, COST)
    out = run_adabort(rec, Sequence([0.2, 0.6, 0.1]), graph3, COST, 0.5)
    assert (out.status, out.abort_round) == ("aborted", 2)
    assert out.time_cost == pytest.approx(1.9)
    tiny = [run_adabort(r, Const(1e-9), graph3, COST, 1e-12) for r in shots3.records()[:20]]
    assert all(o.abort_round == 1 for o in tiny)
    assert efficiency(tiny).eta_dec == 0.0


def test_adabort_final_round_flag(graph3, shots3):
    rec = shots3.record(1)
    late = Sequence([0.1, 0.1, 0.9])
    assert run_adabort(rec, late, graph3, COST, 0.5).abort_round == 3
    assert run_adabort(rec, late, graph3, COST, 0.5, check_final_round=False) == run_fd(rec, graph3, COST)


def test_osla_never_checks_final_round(graph3, shots3):
    calls = []

    class Spy:
        def p_fail(self, x):
            calls.append(1)
            return np.array([[0.5, 0.0]])

    run_osla(shots3.record(0), Spy(), graph3, COST)
    assert len(calls) == 2  # T - 1 checks


def test_stream_reveals_rounds_in_order(shots3):
    rec = shots3.record(2)
    for t, seen in stream_rounds(rec):
        assert np.array_equal(seen[:t], rec.history.events[:t])
        assert np.all(seen[t:] == PAD)


def test_policy_config_validation(graph3, shots3):
    with pytest.raises(ValueError):
        PolicyConfig("AdAbort", 3, theta=1.5, model=Const(0.1))
    with pytest.raises(ValueError):
        PolicyConfig("OSLA", 3, c=0.1, model=Const(0, 0))
    with pytest.raises(ValueError):
        PolicyConfig("OSLA", 3)
    cfg = PolicyConfig("AdAbort", 3, theta=0.5, model=Sequence([0.2, 0.6, 0.1]))
    assert run_policy(shots3.record(0), cfg, graph3, COST).abort_round == 2


@pytest.mark.parametrize("policy", ["FD", "OSLA", "AdAbort"])
def test_replay_equals_streaming(graph3, shots3, policy):
    rs = replay_set(shots3, graph3)
    recs = shots3.records()
    if policy == "FD":
        streamed = efficiency([run_fd(r, graph3, COST) for r in recs])
        replayed = replay_fd(rs, COST)
    elif policy == "OSLA":
        model = two_head_mlp(8, seed=5)
        g, m = osla_scores(model, rs.events)
        c = float(np.median(g - m))
        streamed = efficiency([run_osla(r, model, graph3, COST, -abs(c) - 1e-6) for r in recs])
        replayed = replay_osla(rs, g, m, -abs(c) - 1e-6, COST)
    else:
        model = cnn1d(3, 8, seed=5)
        sc = adabort_scores(model, rs.events)
        theta = float(np.median(sc))
        streamed = efficiency([run_adabort(r, model, graph3, COST, theta) for r in recs])
        replayed = replay_adabort(rs, sc, theta, COST)
    assert streamed == replayed


def test_fd_reduction_in_replay(graph3, shots3):
    rs = replay_set(shots3, graph3)
    fd = replay_fd(rs, COST)
    (_, never), = sweep_theta(rs, Const(0.2), None, COST, [0.99])
    assert never == fd
    (_, quiet), = sweep_c(rs, Const(0.0, 0.0), None, COST, [-0.01])
    assert quiet == fd


def test_sweep_single_point_matches_replay(graph3, shots3):
    rs = replay_set(shots3, graph3)
    model = cnn1d(3, 8, seed=1)
    sc = adabort_scores(model, rs.events)
    (th, rep), = sweep_theta(rs, model, None, COST, [0.4])
    assert th == 0.4 and rep == replay_adabort(rs, sc, 0.4, COST)
    assert sweep_theta(shots3, model, graph3, COST, [0.4])[0][1] == rep


@given(st.lists(st.tuples(st.integers(0, 3), st.booleans()), min_size=1, max_size=50))
@settings(max_examples=60, deadline=None)
def test_conservation_and_cost_identity(items):
    # abort round 0 means "ran to full depth"
    abort = np.array([a for a, _ in items])
    success = np.array([s for _, s in items])
    T = 3
    scores = np.zeros((len(items), T))
    for i, a in enumerate(abort):
        if a:
            scores[i, a - 1] = 1.0
    rs = ReplaySet(np.zeros((len(items), T, 8), np.uint8), success)
    r = replay_adabort(rs, scores, 0.5, COST)
    assert r.N == r.N_s + r.N_f + r.N_a == len(items)
    want = math.fsum(
        COST.aborted(a) if a else (COST.success(T) if s else COST.failure(T)) for a, s in items
    )
    assert r.total_time == want
    assert all(COST.aborted(t) < COST.success(T) for t in range(1, T))


def test_grids():
    th = theta_grid()
    assert len(th) == 20 and th[0] == 0.05 and th[-1] == pytest.approx(0.95)
    assert np.all(np.diff(th) > 0)
    assert len(theta_grid(5, 1e-3, 0.9, "log")) == 5
    cs = c_grid()
    assert len(cs) == 12 and np.all(cs < 0)


def test_csv_columns():
    rep = EfficiencyReport.from_costs(1, 0, 1, [2.1, 1.2])
    text = efficiency_csv([efficiency_row("AdAbort", 3, 0.01, 0.5, rep, 7), efficiency_row("FD", 3, 0.01, "", rep, 7)])
    lines = text.splitlines()
    assert lines[0] == ",".join(EFFICIENCY_COLUMNS)
    assert lines[0] == "policy,d,p,theta_or_c,N,N_s,N_f,N_a,total_time_us,S_rate,eta_dec,seed"
    fields = lines[1].split(",")
    assert fields[:8] == ["AdAbort", "3", "0.01", "0.5", "2", "1", "0", "1"]
    assert float(fields[10]) == rep.eta_dec
    assert lines[2].split(",")[3] == ""
