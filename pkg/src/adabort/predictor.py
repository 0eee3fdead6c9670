"""Failure predictors for the adaptive abort policies.

Two architectures share one interface:

* ``two_head_mlp``: flattened ``(2, n_checks)`` input, Dense 128 ReLU,
  Dense 64 ReLU, then two independent 1-unit sigmoid heads ``g`` (stop now)
  and ``m`` (one more round).
* ``cnn1d``: the ``(T_max, n_checks)`` prefix is transposed so the sequence
  axis runs over checks and every round is a channel, then
  Conv1D(64, 3) ReLU, BatchNorm, Conv1D(64, 3) ReLU, BatchNorm, global
  average pooling and a 1-unit sigmoid.

Networks output the probability that the decoder succeeds (label 1);
``p_fail`` is one minus that.  Padded rows hold ``PAD = -1``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import nn
from .circuit import AnnotatedCircuit, build_memory_circuit
from .fileio import atomic_write_bytes, atomic_write_text
from .frame_sim import ShotBatch, ShotRecord, sample_seeds
from .rng import shot_seeds
from .surface_code import CodeLayout

PAD = -1
HEAD_TAGS = ("stop_now", "one_more")
ARCHITECTURES = ("two_head_mlp", "cnn1d")


@dataclass(frozen=True)
class PaddedPrefix:
    matrix: np.ndarray  # (T_max, n_checks) int8 over {0, 1, PAD}
    true_rounds: int


@dataclass(frozen=True)
class TrainingExample:
    input: PaddedPrefix
    label: int
    head_tag: str | None = None
    shot: int = 0


@dataclass(frozen=True)
class FailureEstimate:
    p_fail: float


class PrefixDataset:
    """Column store of training examples; indexing yields ``TrainingExample``."""

    def __init__(self, inputs, true_rounds, labels, shots, heads=None):
        self.inputs = np.asarray(inputs, dtype=np.int8)
        self.true_rounds = np.asarray(true_rounds, dtype=np.int16)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.shots = np.asarray(shots, dtype=np.int64)
        n = self.inputs.shape[0]
        self.heads = np.full(n, -1, np.int8) if heads is None else np.asarray(heads, dtype=np.int8)
        for name in ("true_rounds", "labels", "shots", "heads"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per example")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i: int) -> TrainingExample:
        tag = HEAD_TAGS[self.heads[i]] if self.heads[i] >= 0 else None
        return TrainingExample(
            PaddedPrefix(self.inputs[i], int(self.true_rounds[i])), int(self.labels[i]), tag, int(self.shots[i])
        )

    @property
    def is_osla(self) -> bool:
        return bool(len(self) and self.heads[0] >= 0)

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.inputs.shape[1], self.inputs.shape[2]

    def subset(self, idx) -> "PrefixDataset":
        return PrefixDataset(self.inputs[idx], self.true_rounds[idx], self.labels[idx], self.shots[idx], self.heads[idx])

    def split_by_shot(self, val_fraction: float, seed: int) -> tuple["PrefixDataset", "PrefixDataset"]:
        """Train/validation split keeping all prefixes of a shot on the same side."""
        uniq = np.unique(self.shots)
        perm = np.random.default_rng(seed).permutation(uniq)
        n_val = int(round(val_fraction * uniq.size))
        val_shots = perm[uniq.size - n_val:]
        in_val = np.isin(self.shots, val_shots)
        return self.subset(np.flatnonzero(~in_val)), self.subset(np.flatnonzero(in_val))


def _as_events(shots) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(shots, ShotBatch):
        return shots.events, np.arange(len(shots))
    shots = list(shots)
    if not shots:
        raise ValueError("no shots given")
    hists = [s.history if isinstance(s, ShotRecord) else s for s in shots]
    shape = hists[0].events.shape
    if any(h.events.shape != shape for h in hists):
        raise ValueError("all shots must have the same history dimensions")
    return np.stack([h.events for h in hists]), np.arange(len(hists))


def make_prefix_dataset(shots, labels: Sequence[int], shot_ids=None) -> PrefixDataset:
    """Expand every ``T x n_checks`` history into its ``T`` padded prefixes."""
    events, ids = _as_events(shots)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    if labels.shape[0] != events.shape[0]:
        raise ValueError(f"{events.shape[0]} shots but {labels.shape[0]} labels")
    if shot_ids is not None:
        ids = np.asarray(shot_ids, dtype=np.int64)
    n, T, C = events.shape
    inputs = np.full((n, T, T, C), PAD, dtype=np.int8)
    for t in range(T):
        inputs[:, t, : t + 1] = events[:, : t + 1]
    rounds = np.tile(np.arange(1, T + 1), n)
    return PrefixDataset(inputs.reshape(n * T, T, C), rounds, np.repeat(labels, T), np.repeat(ids, T))


@dataclass(frozen=True)
class CircuitFamily:
    """Memory circuits of one code and noise level at any number of rounds."""

    layout: CodeLayout
    p: float
    basis: str = "X"

    def circuit(self, rounds: int) -> AnnotatedCircuit:
        return _family_circuit(self.layout, rounds, self.p, self.basis)


@lru_cache(maxsize=64)
def _family_circuit(layout, rounds, p, basis):
    return build_memory_circuit(layout, rounds, p, basis)


@dataclass
class OslaShots:
    """Raw one- or two-round shots; unused second rows are zero."""

    rounds: np.ndarray  # (n,) in {1, 2}
    events: np.ndarray  # (n, 2, n_checks)
    flips: np.ndarray  # (n,)
    seeds: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.rounds.shape[0]


def sample_osla_shots(family: CircuitFamily, n: int, seed: int, threads: int | None = None) -> OslaShots:
    """Draw ``r`` uniformly from {1, 2} per shot and run an ``r``-round memory experiment."""
    if n < 1:
        raise ValueError("n must be ≥ 1")
    rounds = np.random.default_rng(seed).integers(1, 3, size=n)
    seeds = shot_seeds(seed, 0, n)
    events = np.zeros((n, 2, family.layout.n_checks), dtype=np.uint8)
    flips = np.zeros(n, dtype=np.uint8)
    for r in (1, 2):
        idx = np.flatnonzero(rounds == r)
        if idx.size == 0:
            continue
        batch = sample_seeds(family.circuit(r), seeds[idx], threads)
        events[idx, :r] = batch.events
        flips[idx] = batch.flips
    return OslaShots(rounds, events, flips, seeds)


def osla_dataset(shots: OslaShots) -> PrefixDataset:
    """Pad one-round shots, label 1 unless the observable flipped, tag heads by round count."""
    inputs = shots.events.astype(np.int8)
    inputs[shots.rounds == 1, 1] = PAD
    labels = 1 - shots.flips
    return PrefixDataset(inputs, shots.rounds, labels, np.arange(len(shots)), shots.rounds - 1)


def make_osla_dataset(family: CircuitFamily, n: int, seed: int, threads: int | None = None) -> PrefixDataset:
    """One- and two-round shots for the two OSLA heads (stop-now and one-more)."""
    return osla_dataset(sample_osla_shots(family, n, seed, threads))


# ----------------------------------------------------------------- models


class Predictor:
    """A trainable network plus its architecture descriptor."""

    def __init__(self, architecture: str, input_shape: tuple[int, int], seed: int = 0,
                 hide_lookahead: bool = True):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        self.seed = int(seed)
        self.hide_lookahead = bool(hide_lookahead)
        rng = np.random.default_rng(seed)
        T, C = self.input_shape
        if architecture == "two_head_mlp":
            self.trunk = nn.Sequential([nn.Dense(T * C, 128, rng), nn.ReLU(), nn.Dense(128, 64, rng), nn.ReLU()])
            self.heads = [nn.Dense(64, 1, rng, init="glorot"), nn.Dense(64, 1, rng, init="glorot")]
        else:
            self.trunk = nn.Sequential([
                nn.Conv1D(T, 64, 3, rng), nn.ReLU(), nn.BatchNorm(64),
                nn.Conv1D(64, 64, 3, rng), nn.ReLU(), nn.BatchNorm(64),
                nn.GlobalAveragePool(),
            ])
            self.heads = [nn.Dense(64, 1, rng, init="glorot")]

    @property
    def n_outputs(self) -> int:
        return len(self.heads)

    @property
    def params(self) -> list[np.ndarray]:
        return self.trunk.params + [p for h in self.heads for p in h.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return self.trunk.grads + [g for h in self.heads for g in h.grads]

    @property
    def buffers(self) -> list[np.ndarray]:
        return self.trunk.buffers

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def descriptor(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "hide_lookahead": self.hide_lookahead,
            "param_shapes": [list(p.shape) for p in self.params],
            "buffer_shapes": [list(b.shape) for b in self.buffers],
        }

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match model {self.input_shape}")
        x = x.astype(np.float64)
        if self.architecture == "two_head_mlp":
            if self.hide_lookahead:
                x[:, 1:] = PAD
            return x.reshape(x.shape[0], -1)
        return x.transpose(0, 2, 1)

    def logits(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = self.trunk.forward(self._prepare(x), train)
        return np.concatenate([head.forward(h, train) for head in self.heads], axis=1)

    def backward(self, dlogits: np.ndarray) -> None:
        dh = sum(head.backward(dlogits[:, k:k + 1]) for k, head in enumerate(self.heads))
        self.trunk.backward(dh)

    def predict_success(self, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Sigmoid outputs, shape ``(N, n_outputs)``; inference mode."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        out = [nn.sigmoid(self.logits(x[i:i + batch_size])) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.n_outputs))

    def p_fail(self, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        return 1.0 - self.predict_success(x, batch_size)

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_parameters:
            raise ValueError(f"expected {self.n_parameters} parameters, got {vec.size}")
        k = 0
        for p in self.params:
            p[...] = vec[k:k + p.size].reshape(p.shape)
            k += p.size

    def state(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [p.copy() for p in self.params], [b.copy() for b in self.buffers]

    def load_state(self, state) -> None:
        params, buffers = state
        for dst, src in zip(self.params, params):
            dst[...] = src
        for dst, src in zip(self.buffers, buffers):
            dst[...] = src


def two_head_mlp(n_checks: int, seed: int = 0, hide_lookahead: bool = True) -> Predictor:
    return Predictor("two_head_mlp", (2, n_checks), seed, hide_lookahead)


def cnn1d(rounds: int, n_checks: int, seed: int = 0) -> Predictor:
    return Predictor("cnn1d", (rounds, n_checks), seed)


def forward(model: Predictor, prefix: PaddedPrefix | np.ndarray):
    """Failure estimate(s) for one prefix: ``(g, m)`` for the MLP, one value for the CNN."""
    matrix = prefix.matrix if isinstance(prefix, PaddedPrefix) else prefix
    probs = model.p_fail(np.asarray(matrix)[None])[0]
    estimates = tuple(FailureEstimate(float(v)) for v in probs)
    return estimates if len(estimates) > 1 else estimates[0]


# --------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    val_fraction: float = 0.2
    patience: int = 5
    seed: int = 0
    class_weight_cap: float = 100.0
    osla_loss: str = "masked"  # or "shared": every example supervises both heads


@dataclass
class TrainResult:
    model: Predictor
    curve: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    metrics: dict = field(default_factory=dict)


class TrainingDiverged(RuntimeError):
    pass


def _targets(model: Predictor, ds: PrefixDataset, osla_loss: str) -> tuple[np.ndarray, np.ndarray]:
    y = np.repeat(ds.labels[:, None].astype(np.float64), model.n_outputs, axis=1)
    if model.n_outputs == 1:
        return y, np.ones_like(y)
    if osla_loss == "shared":
        return y, np.ones_like(y)
    if osla_loss != "masked":
        raise ValueError(f"osla_loss must be 'masked' or 'shared', got {osla_loss!r}")
    if np.any(ds.heads < 0):
        raise ValueError("two-head training needs head-tagged examples")
    mask = np.zeros_like(y)
    mask[np.arange(len(ds)), ds.heads] = 1.0
    return y, mask


def class_weights(y: np.ndarray, mask: np.ndarray, cap: float) -> np.ndarray:
    """Per-entry weights: the rarer label of each output column is upweighted by inverse frequency."""
    w = mask.copy()
    for k in range(y.shape[1]):
        m = mask[:, k] > 0
        pos = int((y[m, k] == 1).sum())
        neg = int(m.sum()) - pos
        if pos == 0 or neg == 0:
            continue
        ratio = min(max(pos, neg) / min(pos, neg), cap)
        minority = 1.0 if pos < neg else 0.0
        w[m & (y[:, k] == minority), k] *= ratio
    return w


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the normalized Mann-Whitney U (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def auc_standard_error(auc: float, n_pos: int, n_neg: int) -> float:
    """Hanley-McNeil standard error of an ROC-AUC estimate."""
    q1 = auc / (2 - auc)
    q2 = 2 * auc * auc / (1 + auc)
    var = (auc * (1 - auc) + (n_pos - 1) * (q1 - auc * auc) + (n_neg - 1) * (q2 - auc * auc)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


def auc_errors(metrics: dict, val: PrefixDataset) -> dict:
    """Standard errors of the AUCs in ``metrics`` from validation class counts (per head for OSLA)."""
    groups = {"auc": np.ones(len(val), dtype=bool)}
    if val.is_osla:
        groups.update({f"auc_{tag}": val.heads == k for k, tag in enumerate(HEAD_TAGS)})
    out = {}
    for key, sel in groups.items():
        pos = int(val.labels[sel].sum())
        neg = int(sel.sum()) - pos
        if pos and neg and math.isfinite(metrics.get(key, math.nan)):
            out[f"{key}_se"] = auc_standard_error(metrics[key], pos, neg)
    return out


def _safe_auc(scores, labels) -> float:
    try:
        return roc_auc(scores, labels)
    except ValueError:
        return float("nan")


def evaluate(model: Predictor, ds: PrefixDataset, osla_loss: str = "masked", cap: float = 100.0,
             weights: np.ndarray | None = None) -> dict:
    """Weighted loss plus ROC-AUC per output head on ``ds``."""
    y, mask = _targets(model, ds, osla_loss)
    w = class_weights(y, mask, cap) if weights is None else weights
    z = np.concatenate([model.logits(ds.inputs[i:i + 4096]) for i in range(0, len(ds), 4096)])
    loss, _ = nn.bce_with_logits(z, y, w)
    out = {"loss": loss}
    if model.n_outputs == 1:
        out["auc"] = _safe_auc(z[:, 0], ds.labels)
    else:
        for k, tag in enumerate(HEAD_TAGS):
            sel = mask[:, k] > 0
            out[f"auc_{tag}"] = _safe_auc(z[sel, k], ds.labels[sel]) if sel.any() else float("nan")
        out["auc"] = out["auc_stop_now"]
    return out


def train(model: Predictor, dataset: PrefixDataset, config: TrainConfig | None = None,
          progress=None) -> TrainResult:
    """Adam on weighted binary cross-entropy with early stopping on validation loss.

    The dataset is split by shot; the returned model holds the parameters of
    the epoch with the lowest validation loss.  ``progress`` (optional) is
    called with each loss-curve row.
    """
    cfg = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.input_shape != model.input_shape:
        raise ValueError(f"dataset inputs {dataset.input_shape} do not match model {model.input_shape}")
    train_ds, val_ds = dataset.split_by_shot(cfg.val_fraction, cfg.seed)
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train/validation split left one side empty")

    y_tr, m_tr = _targets(model, train_ds, cfg.osla_loss)
    w_tr = class_weights(y_tr, m_tr, cfg.class_weight_cap)
    y_va, m_va = _targets(model, val_ds, cfg.osla_loss)
    w_va = class_weights(y_va, m_va, cfg.class_weight_cap)

    rng = np.random.default_rng(cfg.seed + 1)
    opt = nn.Adam(model.params, lr=cfg.lr)
    result = TrainResult(model)
    best_loss, best_state, stale = math.inf, model.state(), 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds))
        tot, wsum = 0.0, 0.0
        for b, lo in enumerate(range(0, order.size, cfg.batch_size)):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            z = model.logits(train_ds.inputs[idx], train=True)
            loss, dz = nn.bce_with_logits(z, y_tr[idx], w_tr[idx])
            if not math.isfinite(loss):
                norms = [float(np.linalg.norm(p)) for p in model.params]
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}; parameter norms {norms}"
                )
            model.backward(dz)
            opt.step(model.grads)
            bw = float(w_tr[idx].sum())
            tot += loss * bw
            wsum += bw
        ev = evaluate(model, val_ds, cfg.osla_loss, weights=w_va)
        row = {"epoch": epoch, "train_loss": tot / max(wsum, 1e-300), "val_loss": ev["loss"], "val_auc": ev["auc"]}
        result.curve.append(row)
        if progress:
            progress(row)
        if not math.isfinite(ev["loss"]):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if ev["loss"] < best_loss:
            best_loss, best_state, stale = ev["loss"], model.state(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state(best_state)
    final = evaluate(model, val_ds, cfg.osla_loss, weights=w_va)
    final.update(
        best_epoch=result.best_epoch,
        n_train=len(train_ds),
        n_val=len(val_ds),
        val_positives=int(val_ds.labels.sum()),
        val_negatives=int(len(val_ds) - val_ds.labels.sum()),
    )
    final.update(auc_errors(final, val_ds))
    result.metrics = final
    return result


# ------------------------------------------------------------- file I/O

CHECKPOINT_MAGIC = b"ADABCKPT"
CHECKPOINT_VERSION = 1
LOSS_CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "val_auc")


def checkpoint_bytes(model: Predictor) -> bytes:
    desc = json.dumps(model.descriptor(), sort_keys=True).encode("utf-8")
    params = model.parameter_vector().astype("<f8")
    buffers = (np.concatenate([b.ravel() for b in model.buffers]) if model.buffers else np.zeros(0)).astype("<f8")
    return b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(desc)),
        desc,
        struct.pack("<Q", params.size),
        params.tobytes(),
        struct.pack("<Q", buffers.size),
        buffers.tobytes(),
    ])


def save_checkpoint(model: Predictor, path) -> bytes:
    data = checkpoint_bytes(model)
    atomic_write_bytes(path, data)
    return data


def load_checkpoint(path) -> Predictor:
    with open(path, "rb") as fh:
        data = fh.read()
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data: bytes) -> Predictor:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a predictor checkpoint (bad magic)")
    version, dlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    desc = json.loads(data[off:off + dlen].decode("utf-8"))
    off += dlen
    model = Predictor(desc["architecture"], tuple(desc["input_shape"]), desc["seed"], desc.get("hide_lookahead", True))
    if [list(p.shape) for p in model.params] != desc["param_shapes"]:
        raise ValueError("checkpoint parameter shapes do not match the architecture")
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    model.set_parameter_vector(np.frombuffer(data, dtype="<f8", count=n, offset=off))
    off += 8 * n
    (nb,) = struct.unpack_from("<Q", data, off)
    off += 8
    flat = np.frombuffer(data, dtype="<f8", count=nb, offset=off)
    k = 0
    for b in model.buffers:
        b[...] = flat[k:k + b.size].reshape(b.shape)
        k += b.size
    if k != nb:
        raise ValueError("checkpoint buffer size mismatch")
    return model


def loss_curve_csv(curve: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_CURVE_COLUMNS)
    for row in curve:
        w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOSS_CURVE_COLUMNS[1:]])
    return buf.getvalue()


def write_loss_curve(curve: list[dict], path) -> None:
    atomic_write_text(path, loss_curve_csv(curve))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
