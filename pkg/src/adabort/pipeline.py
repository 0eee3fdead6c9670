"""End-to-end workflows shared by the command line and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import AnnotatedCircuit, build_memory_circuit
from .frame_sim import ShotBatch, sample_arrays
from .mwpm import DecodingGraph, build_decoding_graph, predict_flips
from .policies import (
    CostModel,
    ReplaySet,
    adabort_scores,
    efficiency_row,
    osla_scores,
    replay_fd,
    sweep_c,
    sweep_theta,
)
from .predictor import (
    CircuitFamily,
    Predictor,
    TrainConfig,
    TrainResult,
    cnn1d,
    make_osla_dataset,
    make_prefix_dataset,
    train,
    two_head_mlp,
)
from .rng import shot_seeds
from .surface_code import build_layout

# salt separating the success-subsampling stream from the sampling stream
_SUBSAMPLE_SALT = 0x5DEECE66D


@dataclass
class Setup:
    circuit: AnnotatedCircuit
    graph: DecodingGraph

    @property
    def d(self) -> int:
        return self.circuit.layout.distance


def setup(d: int, p: float, rounds: int | None = None, basis: str = "X") -> Setup:
    circuit = build_memory_circuit(build_layout(d), rounds or d, p, basis)
    return Setup(circuit, build_decoding_graph(circuit))


@dataclass
class LabelledShots:
    batch: ShotBatch
    success: np.ndarray  # decoder outcome per kept shot
    shot_ids: np.ndarray  # index in the full stream
    n_total: int
    success_fraction: float


def _concat(batches: list[ShotBatch]) -> ShotBatch:
    return ShotBatch(*(np.concatenate([getattr(b, f) for b in batches]) for f in ("events", "final_events", "flips", "seeds")))


def subsample_mask(seed: int, start: int, count: int, fraction: float) -> np.ndarray:
    """Independent keep/drop draws for shots ``start .. start+count-1``."""
    if fraction >= 1:
        return np.ones(count, dtype=bool)
    u = (shot_seeds(seed ^ _SUBSAMPLE_SALT, start, count) >> np.uint64(11)).astype(np.float64) / 2.0**53
    return u < fraction


def labelled_shots(s: Setup, n: int, seed: int, success_fraction: float = 1.0, chunk: int = 200_000,
                   threads: int | None = None, start: int = 0) -> LabelledShots:
    """Sample and decode ``n`` shots, keeping every failure and a fraction of successes.

    Success ``i`` is kept when an independent uniform draw derived from
    ``(seed, i)`` falls below ``success_fraction``, so the selection does not
    depend on chunking.
    """
    if not 0 < success_fraction <= 1:
        raise ValueError("success_fraction must lie in (0, 1]")
    parts, oks, ids = [], [], []
    cache: dict = {}
    for lo in range(start, start + n, chunk):
        m = min(chunk, start + n - lo)
        b = sample_arrays(s.circuit, m, seed, start=lo, threads=threads)
        ok = predict_flips(s.graph, b.detector_matrix(), cache) == b.flips
        keep = ~ok | subsample_mask(seed, lo, m, success_fraction)
        idx = np.flatnonzero(keep)
        parts.append(b.subset(idx))
        oks.append(ok[idx])
        ids.append(lo + idx)
        if len(cache) > 2_000_000:
            cache.clear()
    return LabelledShots(_concat(parts), np.concatenate(oks), np.concatenate(ids), n, success_fraction)


def logical_error_count(s: Setup, n: int, seed: int, chunk: int = 100_000, threads: int | None = None) -> int:
    """Number of fixed-depth decoding failures among ``n`` shots."""
    fails = 0
    cache: dict = {}
    for lo in range(0, n, chunk):
        b = sample_arrays(s.circuit, min(chunk, n - lo), seed, start=lo, threads=threads)
        fails += int((predict_flips(s.graph, b.detector_matrix(), cache) != b.flips).sum())
    return fails


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    phat = k / n
    den = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / den
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def train_adabort(s: Setup, n: int, seed: int, success_fraction: float = 1.0,
                  config: TrainConfig | None = None, progress=None, threads: int | None = None):
    """Train the prefix CNN on decoder-success labels of full-depth shots."""
    data = labelled_shots(s, n, seed, success_fraction, threads=threads)
    ds = make_prefix_dataset(data.batch, data.success.astype(np.uint8), data.shot_ids)
    cfg = config or TrainConfig(seed=seed)
    model = cnn1d(s.circuit.rounds, s.circuit.n_checks, seed=cfg.seed)
    return train(model, ds, cfg, progress), data


def train_osla(d: int, p: float, n: int, seed: int, config: TrainConfig | None = None, basis: str = "X",
               hide_lookahead: bool = True, progress=None, threads: int | None = None) -> TrainResult:
    family = CircuitFamily(build_layout(d), p, basis)
    ds = make_osla_dataset(family, n, seed, threads)
    cfg = config or TrainConfig(seed=seed)
    model = two_head_mlp(family.layout.n_checks, seed=cfg.seed, hide_lookahead=hide_lookahead)
    return train(model, ds, cfg, progress)


def replay_from(s: Setup, n: int, seed: int, threads: int | None = None, start: int = 0) -> ReplaySet:
    data = labelled_shots(s, n, seed, 1.0, threads=threads, start=start)
    return ReplaySet(data.batch.events, data.success)


def best(sweep):
    """Grid point with the highest efficiency (first one on ties)."""
    return max(sweep, key=lambda item: item[1].eta_dec)


@dataclass
class BenchmarkResult:
    rows: list[dict]
    theta: float | None
    c: float | None


def benchmark(rs: ReplaySet, d: int, p: float, seed: int, cost: CostModel,
              adabort_model: Predictor | None, osla_model: Predictor | None,
              theta_grid, c_grid, tune: ReplaySet | None = None,
              check_final_round: bool = True) -> BenchmarkResult:
    """FD, OSLA and AdAbort on the same replayed shots.

    Adaptive parameters are picked on ``tune`` (defaults to ``rs`` itself) by
    maximizing efficiency over the grids, then evaluated on ``rs``.
    """
    tune = tune or rs
    rows = [efficiency_row("FD", d, p, "", replay_fd(rs, cost), seed)]
    theta = c = None
    if osla_model is not None:
        c, _ = best(sweep_c(tune, osla_model, None, cost, c_grid))
        (_, rep), = sweep_c(rs, osla_model, None, cost, [c])
        rows.append(efficiency_row("OSLA", d, p, c, rep, seed))
    if adabort_model is not None:
        theta, _ = best(sweep_theta(tune, adabort_model, None, cost, theta_grid, check_final_round=check_final_round))
        (_, rep), = sweep_theta(rs, adabort_model, None, cost, [theta], check_final_round=check_final_round)
        rows.append(efficiency_row("AdAbort", d, p, theta, rep, seed))
    return BenchmarkResult(rows, theta, c)


def sweep_rows(rs: ReplaySet, d: int, p: float, seed: int, cost: CostModel, adabort_model=None,
               osla_model=None, theta_grid=(), c_grid=(), check_final_round: bool = True) -> list[dict]:
    rows = []
    if adabort_model is not None and len(theta_grid):
        scores = adabort_scores(adabort_model, rs.events)
        for th, rep in sweep_theta(rs, adabort_model, None, cost, theta_grid, scores, check_final_round):
            rows.append(efficiency_row("AdAbort", d, p, th, rep, seed))
    if osla_model is not None and len(c_grid):
        gm = osla_scores(osla_model, rs.events)
        for c, rep in sweep_c(rs, osla_model, None, cost, c_grid, gm):
            rows.append(efficiency_row("OSLA", d, p, c, rep, seed))
    return rows
