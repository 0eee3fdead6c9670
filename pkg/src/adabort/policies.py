"""Shot-orchestration policies, per-shot cost accounting and decoder efficiency.

Per-shot functions (``run_fd``, ``run_osla``, ``run_adabort``) consume a
record round by round, revealing only the rounds seen so far.  The
``replay_*`` functions evaluate the same rules on whole arrays of
precomputed model outputs, which is how threshold sweeps reuse one set of
shots.  Both paths produce identical reports.

A model is anything with ``p_fail(x) -> (N, k)`` on padded prefixes of shape
``(N, T_max, n_checks)``; OSLA models return ``(g, m)`` columns.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .mwpm import DecodingGraph, decode_success, predict_flips
from .predictor import PAD

ABORTED = "aborted"
SUCCESS = "decoded_success"
FAILURE = "decoded_failure"
POLICY_KINDS = ("FD", "OSLA", "AdAbort")
DEFAULT_C = -0.01


@dataclass(frozen=True)
class CostModel:
    M: float = 0.7
    R_reset: float = 0.5
    D_fail: float = 1.0

    def __post_init__(self):
        if min(self.M, self.R_reset, self.D_fail) < 0:
            raise ValueError("cost model entries must be nonnegative")

    def aborted(self, t: int) -> float:
        return t * self.M + self.R_reset

    def success(self, T: int) -> float:
        return T * self.M

    def failure(self, T: int) -> float:
        return T * self.M + self.D_fail


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    T_d: int
    theta: float | None = None
    c: float = DEFAULT_C
    model: object = None
    check_final_round: bool = True

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}")
        if self.T_d < 1:
            raise ValueError("T_d must be ≥ 1")
        if self.kind == "AdAbort" and not (self.theta is not None and 0 < self.theta < 1):
            raise ValueError("AdAbort needs theta in (0, 1)")
        if self.kind == "OSLA" and not self.c < 0:
            raise ValueError("OSLA continuation cost c must be negative")
        if self.kind != "FD" and self.model is None:
            raise ValueError(f"{self.kind} needs a predictor")


@dataclass(frozen=True)
class ShotOutcome:
    status: str
    time_cost: float
    abort_round: int | None = None


@dataclass(frozen=True)
class EfficiencyReport:
    N: int
    N_s: int
    N_f: int
    N_a: int
    total_time: float
    S_rate: float
    eta_dec: float

    @classmethod
    def from_costs(cls, N_s: int, N_f: int, N_a: int, costs) -> "EfficiencyReport":
        N = N_s + N_f + N_a
        if N == 0:
            raise ValueError("efficiency of an empty shot set")
        total = math.fsum(costs)
        s_rate = N_s / (N_s + N_f) if N_s + N_f else 0.0
        eta = s_rate / (total / N) if s_rate else 0.0
        return cls(N, N_s, N_f, N_a, total, s_rate, eta)


def _outcome(success: bool, T: int, cost: CostModel) -> ShotOutcome:
    if success:
        return ShotOutcome(SUCCESS, cost.success(T))
    return ShotOutcome(FAILURE, cost.failure(T))


def _aborted(t: int, cost: CostModel) -> ShotOutcome:
    return ShotOutcome(ABORTED, cost.aborted(t), t)


def _events(record) -> np.ndarray:
    hist = record.history if hasattr(record, "history") else record
    return np.asarray(hist.events)


def stream_rounds(record):
    """Yield the padded prefix revealed after each round, one round at a time."""
    events = _events(record)
    T, C = events.shape
    seen = np.full((T, C), PAD, dtype=np.int8)
    for t in range(T):
        seen[t] = events[t]
        yield t + 1, seen.copy()


def osla_input(s_t: np.ndarray) -> np.ndarray:
    """Two-row OSLA input for the latest syndrome ``s_t``."""
    x = np.full((2, s_t.shape[-1]), PAD, dtype=np.int8)
    x[0] = s_t
    return x


def run_fd(record, graph: DecodingGraph, cost: CostModel) -> ShotOutcome:
    T = _events(record).shape[0]
    return _outcome(bool(decode_success(graph, record)), T, cost)


def run_osla(record, model, graph: DecodingGraph, cost: CostModel, c: float = DEFAULT_C) -> ShotOutcome:
    """Abort at the first ``t < T`` with ``c + m_t > g_t``; otherwise decode at full depth."""
    if not c < 0:
        raise ValueError("continuation cost c must be negative")
    T = _events(record).shape[0]
    for t, seen in stream_rounds(record):
        if t >= T:
            break
        g, m = model.p_fail(osla_input(seen[t - 1])[None])[0, :2]
        if c + m > g:
            return _aborted(t, cost)
    return _outcome(bool(decode_success(graph, record)), T, cost)


def run_adabort(record, model, graph: DecodingGraph, cost: CostModel, theta: float,
                check_final_round: bool = True) -> ShotOutcome:
    """Abort at the first round whose predicted failure probability reaches ``theta``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    T = _events(record).shape[0]
    last = T if check_final_round else T - 1
    for t, seen in stream_rounds(record):
        if t > last:
            break
        if model.p_fail(seen[None])[0, 0] >= theta:
            return _aborted(t, cost)
    return _outcome(bool(decode_success(graph, record)), T, cost)


def run_policy(record, config: PolicyConfig, graph: DecodingGraph, cost: CostModel) -> ShotOutcome:
    if config.kind == "FD":
        return run_fd(record, graph, cost)
    if config.kind == "OSLA":
        return run_osla(record, config.model, graph, cost, config.c)
    return run_adabort(record, config.model, graph, cost, config.theta, config.check_final_round)


def efficiency(outcomes: list[ShotOutcome]) -> EfficiencyReport:
    if not outcomes:
        raise ValueError("efficiency needs at least one outcome")
    n_s = sum(o.status == SUCCESS for o in outcomes)
    n_f = sum(o.status == FAILURE for o in outcomes)
    n_a = sum(o.status == ABORTED for o in outcomes)
    return EfficiencyReport.from_costs(n_s, n_f, n_a, [o.time_cost for o in outcomes])


# ------------------------------------------------------------------ replay


@dataclass
class ReplaySet:
    """Pre-sampled full-depth shots with their decoder outcomes."""

    events: np.ndarray  # (N, T, n_checks)
    success: np.ndarray  # (N,) bool

    @property
    def rounds(self) -> int:
        return self.events.shape[1]

    def __len__(self) -> int:
        return self.events.shape[0]


def replay_set(batch, graph: DecodingGraph, cache: dict | None = None) -> ReplaySet:
    pred = predict_flips(graph, batch.detector_matrix(), cache)
    return ReplaySet(batch.events, pred == batch.flips)


def prefix_inputs(events: np.ndarray, t: int) -> np.ndarray:
    x = np.full(events.shape, PAD, dtype=np.int8)
    x[:, :t] = events[:, :t]
    return x


def adabort_scores(model, events: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Predicted failure probability after every round, shape ``(N, T)``."""
    N, T, _ = events.shape
    out = np.empty((N, T))
    for lo in range(0, N, chunk):
        ev = events[lo:lo + chunk]
        for t in range(1, T + 1):
            out[lo:lo + chunk, t - 1] = model.p_fail(prefix_inputs(ev, t))[:, 0]
    return out


def osla_scores(model, events: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``g`` and ``m`` for rounds ``1..T-1``, each of shape ``(N, T-1)``."""
    N, T, C = events.shape
    g = np.empty((N, max(T - 1, 0)))
    m = np.empty_like(g)
    for t in range(1, T):
        x = np.full((N, 2, C), PAD, dtype=np.int8)
        x[:, 0] = events[:, t - 1]
        out = model.p_fail(x)
        g[:, t - 1], m[:, t - 1] = out[:, 0], out[:, 1]
    return g, m


def _first_true(mask: np.ndarray) -> np.ndarray:
    """1-based index of the first True per row, 0 when none."""
    if mask.shape[1] == 0:
        return np.zeros(mask.shape[0], dtype=np.int64)
    first = mask.argmax(axis=1) + 1
    first[~mask.any(axis=1)] = 0
    return first


def report_from_abort_rounds(abort_round: np.ndarray, success: np.ndarray, T: int,
                             cost: CostModel) -> EfficiencyReport:
    """Report for shots aborted at ``abort_round`` (0 = ran to full depth and decoded)."""
    abort_round = np.asarray(abort_round)
    success = np.asarray(success, dtype=bool)
    ab = abort_round > 0
    costs = np.where(
        ab,
        abort_round * cost.M + cost.R_reset,
        np.where(success, cost.success(T), cost.failure(T)),
    )
    # identical per-shot floats to the streaming path
    costs[ab] = [cost.aborted(int(t)) for t in abort_round[ab]] if ab.any() else []
    n_s = int((~ab & success).sum())
    n_f = int((~ab & ~success).sum())
    return EfficiencyReport.from_costs(n_s, n_f, int(ab.sum()), costs.tolist())


def replay_fd(rs: ReplaySet, cost: CostModel) -> EfficiencyReport:
    return report_from_abort_rounds(np.zeros(len(rs), np.int64), rs.success, rs.rounds, cost)


def adabort_abort_rounds(scores: np.ndarray, theta: float, check_final_round: bool = True) -> np.ndarray:
    s = scores if check_final_round else scores[:, :-1]
    return _first_true(s >= theta)


def osla_abort_rounds(g: np.ndarray, m: np.ndarray, c: float) -> np.ndarray:
    return _first_true(c + m > g)


def replay_adabort(rs: ReplaySet, scores: np.ndarray, theta: float, cost: CostModel,
                   check_final_round: bool = True) -> EfficiencyReport:
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return report_from_abort_rounds(adabort_abort_rounds(scores, theta, check_final_round), rs.success, rs.rounds, cost)


def replay_osla(rs: ReplaySet, g: np.ndarray, m: np.ndarray, c: float, cost: CostModel) -> EfficiencyReport:
    if not c < 0:
        raise ValueError("continuation cost c must be negative")
    return report_from_abort_rounds(osla_abort_rounds(g, m, c), rs.success, rs.rounds, cost)


def sweep_theta(dataset: ReplaySet, model, graph: DecodingGraph | None, cost: CostModel, theta_grid,
                scores: np.ndarray | None = None, check_final_round: bool = True):
    """AdAbort report for every ``theta`` on the same replayed shots.

    ``graph`` is unused when ``dataset`` already carries decoder outcomes; it is
    accepted so callers can pass a raw batch instead.
    """
    if not isinstance(dataset, ReplaySet):
        dataset = replay_set(dataset, graph)
    if scores is None:
        scores = adabort_scores(model, dataset.events)
    return [(float(th), replay_adabort(dataset, scores, th, cost, check_final_round)) for th in theta_grid]


def sweep_c(dataset: ReplaySet, model, graph: DecodingGraph | None, cost: CostModel, c_grid, gm=None):
    if not isinstance(dataset, ReplaySet):
        dataset = replay_set(dataset, graph)
    g, m = gm if gm is not None else osla_scores(model, dataset.events)
    return [(float(c), replay_osla(dataset, g, m, c, cost)) for c in c_grid]


def theta_grid(n: int = 20, lo: float = 0.05, hi: float = 0.95, spacing: str = "lin") -> np.ndarray:
    """Abort thresholds, evenly spaced (``lin``) or log-spaced (``log``)."""
    if spacing == "log":
        return np.geomspace(lo, hi, n)
    if spacing != "lin":
        raise ValueError("spacing must be 'lin' or 'log'")
    return np.linspace(lo, hi, n)


def c_grid(n: int = 12, lo: float = 1e-4, hi: float = 0.3) -> np.ndarray:
    """Negative continuation costs, log-spaced in magnitude."""
    return -np.geomspace(lo, hi, n)


# -------------------------------------------------------------------- CSV

EFFICIENCY_COLUMNS = ("policy", "d", "p", "theta_or_c", "N", "N_s", "N_f", "N_a",
                      "total_time_us", "S_rate", "eta_dec", "seed")


def efficiency_row(policy: str, d: int, p: float, param, report: EfficiencyReport, seed: int) -> dict:
    return {
        "policy": policy, "d": d, "p": p, "theta_or_c": param, "N": report.N, "N_s": report.N_s,
        "N_f": report.N_f, "N_a": report.N_a, "total_time_us": report.total_time,
        "S_rate": report.S_rate, "eta_dec": report.eta_dec, "seed": seed,
    }


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def efficiency_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EFFICIENCY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in EFFICIENCY_COLUMNS])
    return buf.getvalue()
