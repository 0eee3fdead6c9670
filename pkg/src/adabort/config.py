"""Experiment configuration: a flat ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .policies import CostModel, c_grid, theta_grid
from .predictor import TrainConfig


@dataclass
class ExperimentConfig:
    d: int = 3
    p: float = 1e-3
    rounds: int = 0  # 0 means "same as d"
    basis: str = "X"
    n_shots: int = 10_000
    master_seed: int = 0
    kind: str = "memory"  # dataset kind: memory or osla
    # cost model (µs)
    M: float = 0.7
    R_reset: float = 0.5
    D_fail: float = 1.0
    # policies
    theta: float = 0.0  # 0 means "tune over theta_grid"
    c: float = 0.0  # 0 means "tune over c_grid"
    theta_grid: str = "lin:0.05:0.95:20"
    c_grid: str = "neglog:0.0001:0.3:12"
    check_final_round: bool = True
    # training
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.2
    train_seed: int = 0
    class_weight_cap: float = 100.0
    osla_loss: str = "masked"
    hide_lookahead: bool = True
    success_fraction: float = 1.0
    # scans
    d_list: str = "3,5,7"
    p_list: str = "0.001,0.002,0.004,0.006,0.008,0.01"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d < 3 or self.d % 2 == 0:
            raise ValueError(f"d must be odd and ≥ 3, got {self.d}")
        if not 0 <= self.p < 0.5:
            raise ValueError(f"p must lie in [0, 0.5), got {self.p}")
        if self.rounds < 0:
            raise ValueError("rounds must be ≥ 1 (or 0 for the default d)")
        if self.basis not in ("X", "Z"):
            raise ValueError("basis must be X or Z")
        if self.n_shots < 1:
            raise ValueError("n_shots must be ≥ 1")
        if self.kind not in ("memory", "osla"):
            raise ValueError("kind must be memory or osla")
        if self.osla_loss not in ("masked", "shared"):
            raise ValueError("osla_loss must be masked or shared")
        if not 0 < self.success_fraction <= 1:
            raise ValueError("success_fraction must lie in (0, 1]")
        if self.theta and not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.c > 0:
            raise ValueError("c must be negative (or 0 to tune)")
        CostModel(self.M, self.R_reset, self.D_fail)
        self.thetas()
        self.cs()

    @property
    def T(self) -> int:
        return self.rounds or self.d

    def cost(self) -> CostModel:
        return CostModel(self.M, self.R_reset, self.D_fail)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.batch_size, self.epochs, self.val_fraction, self.patience,
                           self.train_seed, self.class_weight_cap, self.osla_loss)

    def thetas(self) -> np.ndarray:
        if self.theta:
            return np.array([self.theta])
        grid = parse_grid(self.theta_grid)
        if np.any((grid <= 0) | (grid >= 1)):
            raise ValueError("theta grid values must lie in (0, 1)")
        return grid

    def cs(self) -> np.ndarray:
        if self.c:
            return np.array([self.c])
        grid = parse_grid(self.c_grid)
        if np.any(grid >= 0):
            raise ValueError("c grid values must be negative")
        return grid

    def d_values(self) -> list[int]:
        return [int(v) for v in self.d_list.split(",") if v.strip()]

    def p_values(self) -> list[float]:
        return [float(v) for v in self.p_list.split(",") if v.strip()]

    def echo(self) -> dict:
        return dataclasses.asdict(self)


def parse_grid(spec: str) -> np.ndarray:
    """``a,b,c`` lists, or ``lin:lo:hi:n``, ``log:lo:hi:n`` and ``neglog:lo:hi:n`` (negated log-spaced)."""
    spec = spec.strip()
    head = spec.split(":", 1)[0]
    if head in ("lin", "log", "neglog"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ValueError(f"grid {spec!r} must look like {head}:lo:hi:n")
        lo, hi, n = float(parts[1]), float(parts[2]), int(parts[3])
        if n < 1 or lo <= 0 or hi < lo:
            raise ValueError(f"grid {spec!r} needs n ≥ 1 and 0 < lo ≤ hi")
        if head == "neglog":
            return c_grid(n, lo, hi)
        return theta_grid(n, lo, hi, head)
    vals = [float(v) for v in spec.split(",") if v.strip()]
    if not vals:
        raise ValueError(f"empty grid {spec!r}")
    return np.array(vals)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def coerce(name: str, typ, raw: str):
    if typ in (bool, "bool"):
        key = raw.strip().lower()
        if key not in _BOOL:
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return _BOOL[key]
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def field_types() -> dict:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict:
    types = field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = coerce(key, types[key], value)
    return out


def load_config(path: str | Path | None, overrides: dict) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def config_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.echo().items())

