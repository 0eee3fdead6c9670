"""Command-line driver: ``adabort <command> [options]``.

Every command reads an :class:`ExperimentConfig` from ``--config`` (optional)
and per-field flags such as ``--d 5 --p 0.001`` (flags win), writes its
outputs atomically next to a ``<file>.json`` sidecar, and exits with status 2
on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import report
from .circuit import build_memory_circuit
from .config import ExperimentConfig, coerce, field_types, load_config
from .fileio import atomic_write_bytes, atomic_write_text, git_blob_sha1, write_sidecar
from .frame_sim import default_threads, sample_arrays
from .mwpm import build_decoding_graph, predict_flips
from .pipeline import Setup, best, logical_error_count, subsample_mask, wilson_interval
from .policies import (
    ReplaySet,
    adabort_scores,
    efficiency_csv,
    efficiency_row,
    osla_scores,
    replay_adabort,
    replay_fd,
    replay_osla,
    sweep_c,
    sweep_theta,
)
from .predictor import (
    CircuitFamily,
    checkpoint_bytes,
    cnn1d,
    load_checkpoint,
    loss_curve_csv,
    make_prefix_dataset,
    osla_dataset,
    sample_osla_shots,
    train,
    two_head_mlp,
)
from .shotfile import (
    KIND_MEMORY,
    ShotFileHeader,
    osla_header,
    read_shot_file,
    shot_file_bytes,
    shots_csv,
    write_shot_stream,
)
from .surface_code import build_layout

CHUNK = 100_000
SCAN_COLUMNS = ("d", "p", "rounds", "n_shots", "n_fail", "ler", "ci_lo", "ci_hi", "seed")
POLICIES = ("fd", "osla", "adabort")


class UsageError(ValueError):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ------------------------------------------------------------------ config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="key = value file")
    types = field_types()
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, dest=f"cfg_{f.name}", metavar=types[f.name].upper() if isinstance(types[f.name], str) else None,
                       type=lambda raw, n=f.name: coerce(n, types[n], raw), default=None)


def _config(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return load_config(args.config, overrides)


def _setup(cfg: ExperimentConfig) -> Setup:
    circuit = build_memory_circuit(build_layout(cfg.d), cfg.T, cfg.p, cfg.basis)
    return Setup(circuit, build_decoding_graph(circuit))


def _load_dataset(path: Path, cfg: ExperimentConfig, kind: int | None = None):
    header, data = read_shot_file(path)
    if kind is not None and header.kind != kind:
        raise UsageError(f"{path}: expected a {'memory' if kind == KIND_MEMORY else 'OSLA'} dataset")
    if header.d != cfg.d or header.basis != cfg.basis or not math.isclose(header.p, cfg.p, rel_tol=1e-12, abs_tol=0.0):
        raise UsageError(
            f"{path}: dataset (d={header.d}, p={header.p}, basis={header.basis}) "
            f"does not match config (d={cfg.d}, p={cfg.p}, basis={cfg.basis})"
        )
    if header.kind == KIND_MEMORY and header.rounds != cfg.T:
        raise UsageError(f"{path}: dataset has {header.rounds} rounds, config expects {cfg.T}")
    return header, data


def _file_sha(path: Path) -> str:
    return git_blob_sha1(path.read_bytes())


def _figure(args, name: str, draw, rows) -> None:
    if args.figures:
        out = draw(rows, Path(args.figures) / f"{name}.png")
        _log(f"figure {out}")


# ---------------------------------------------------------------- generate


def _memory_chunks(circuit, n: int, seed: int, threads: int):
    for lo in range(0, n, CHUNK):
        yield sample_arrays(circuit, min(CHUNK, n - lo), seed, start=lo, threads=threads)


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if cfg.kind == "memory":
        circuit = build_memory_circuit(build_layout(cfg.d), cfg.T, cfg.p, cfg.basis)
        header = ShotFileHeader.for_circuit(circuit, cfg.n_shots, cfg.master_seed)
        sha = write_shot_stream(out, header, _memory_chunks(circuit, cfg.n_shots, cfg.master_seed, args.threads))
        write_sidecar(out, None, cfg.echo(), sha1=sha, command="generate", format="shotfile-v1")
        if args.csv:
            _, batch = read_shot_file(out)
            atomic_write_text(args.csv, shots_csv(header, batch))
    else:
        family = CircuitFamily(build_layout(cfg.d), cfg.p, cfg.basis)
        shots = sample_osla_shots(family, cfg.n_shots, cfg.master_seed, args.threads)
        header = osla_header(cfg.d, family.layout.n_checks, cfg.p, cfg.basis, cfg.n_shots, cfg.master_seed)
        data = shot_file_bytes(header, shots)
        atomic_write_bytes(out, data)
        write_sidecar(out, data, cfg.echo(), command="generate", format="shotfile-v1")
        if args.csv:
            atomic_write_text(args.csv, shots_csv(header, shots))
    _log(f"wrote {cfg.n_shots} {cfg.kind} shots to {out}")
    return 0


# ------------------------------------------------------------------- train


def _metrics_csv(metrics: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", "value"))
    for k, v in metrics.items():
        w.writerow((k, repr(float(v)) if isinstance(v, float) else v))
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _config(args)
    header, data = _load_dataset(Path(args.dataset), cfg)
    if header.kind == KIND_MEMORY:
        s = _setup(cfg)
        ok = predict_flips(s.graph, data.detector_matrix()) == data.flips
        keep = np.flatnonzero(~ok | subsample_mask(header.master_seed, header.first_shot, len(data), cfg.success_fraction))
        ds = make_prefix_dataset(data.subset(keep), ok[keep].astype(np.uint8), header.first_shot + keep)
        model = cnn1d(cfg.T, header.n_checks, seed=cfg.train_seed)
        _log(f"{len(keep)} of {len(data)} shots kept, {int((~ok).sum())} decoder failures")
    else:
        ds = osla_dataset(data)
        model = two_head_mlp(header.n_checks, seed=cfg.train_seed, hide_lookahead=cfg.hide_lookahead)

    def progress(row):
        _log("epoch {epoch}: train {train_loss:.5f} val {val_loss:.5f} auc {val_auc:.4f}".format(**row))

    result = train(model, ds, cfg.train_config(), progress)
    metrics = {"architecture": model.architecture, "n_parameters": model.n_parameters}
    metrics.update(result.metrics)

    out = Path(args.out)
    ckpt = checkpoint_bytes(model)
    atomic_write_bytes(out, ckpt)
    inputs = {"dataset": str(args.dataset), "dataset_sha1": _file_sha(Path(args.dataset))}
    write_sidecar(out, ckpt, cfg.echo(), command="train", format="checkpoint-v1", **inputs)
    for path, text in ((args.loss_curve or f"{out}.loss.csv", loss_curve_csv(result.curve)),
                       (args.metrics or f"{out}.metrics.csv", _metrics_csv(metrics))):
        atomic_write_text(path, text)
        write_sidecar(path, text.encode(), cfg.echo(), command="train", checkpoint_sha1=git_blob_sha1(ckpt), **inputs)
    _figure(args, out.stem + "_loss", report.loss_figure, result.curve)
    for k in ("auc", "auc_stop_now", "auc_one_more"):
        if k in metrics:
            _log(f"{k} = {metrics[k]:.4f}")
    return 0


# ------------------------------------------------------- benchmark / sweep


def _replay(path: Path, cfg: ExperimentConfig, s: Setup) -> ReplaySet:
    _, batch = _load_dataset(path, cfg, KIND_MEMORY)
    return ReplaySet(batch.events, predict_flips(s.graph, batch.detector_matrix()) == batch.flips)


def _models(args, cfg: ExperimentConfig, policies: list[str]):
    n_checks = cfg.d * cfg.d - 1
    models = {}
    for name, shape in (("adabort", (cfg.T, n_checks)), ("osla", (2, n_checks))):
        if name not in policies:
            continue
        path = getattr(args, name)
        if not path:
            raise UsageError(f"policy {name} needs a checkpoint (--{name} PATH)")
        model = load_checkpoint(path)
        if model.input_shape != shape:
            raise UsageError(f"{path}: model input {model.input_shape} does not match {shape}")
        models[name] = model
    return models


def _policies(args) -> list[str]:
    names = [p.strip().lower() for p in args.policies.split(",") if p.strip()]
    unknown = set(names) - set(POLICIES)
    if unknown:
        raise UsageError(f"unknown policies {sorted(unknown)}; choose from {POLICIES}")
    return names


def _inputs(args, models) -> dict:
    out = {"dataset_sha1": _file_sha(Path(args.dataset))}
    for name in models:
        out[f"{name}_checkpoint_sha1"] = _file_sha(Path(getattr(args, name)))
    if getattr(args, "tune_dataset", None):
        out["tune_dataset_sha1"] = _file_sha(Path(args.tune_dataset))
    return out


def _write_rows(args, cfg, rows, command: str, extra: dict) -> None:
    text = efficiency_csv(rows)
    atomic_write_text(args.out, text)
    write_sidecar(args.out, text.encode(), cfg.echo(), command=command, **extra)
    sys.stdout.write(text)


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    policies = _policies(args)
    models = _models(args, cfg, policies)
    s = _setup(cfg)
    rs = _replay(Path(args.dataset), cfg, s)
    tune = _replay(Path(args.tune_dataset), cfg, s) if args.tune_dataset else rs
    cost, seed = cfg.cost(), cfg.master_seed
    rows = []
    if "fd" in policies:
        rows.append(efficiency_row("FD", cfg.d, cfg.p, "", replay_fd(rs, cost), seed))
    if "osla" in policies:
        m = models["osla"]
        c = cfg.c or best(sweep_c(tune, m, None, cost, cfg.cs()))[0]
        g, mm = osla_scores(m, rs.events)
        rows.append(efficiency_row("OSLA", cfg.d, cfg.p, c, replay_osla(rs, g, mm, c, cost), seed))
    if "adabort" in policies:
        m = models["adabort"]
        theta = cfg.theta or best(sweep_theta(tune, m, None, cost, cfg.thetas(),
                                              check_final_round=cfg.check_final_round))[0]
        rep = replay_adabort(rs, adabort_scores(m, rs.events), theta, cost, cfg.check_final_round)
        rows.append(efficiency_row("AdAbort", cfg.d, cfg.p, theta, rep, seed))
    _write_rows(args, cfg, rows, "benchmark", _inputs(args, models))
    _figure(args, Path(args.out).stem, report.benchmark_figure, rows)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    policies = _policies(args)
    models = _models(args, cfg, policies)
    s = _setup(cfg)
    rs = _replay(Path(args.dataset), cfg, s)
    cost, seed = cfg.cost(), cfg.master_seed
    rows = []
    if "fd" in policies:
        rows.append(efficiency_row("FD", cfg.d, cfg.p, "", replay_fd(rs, cost), seed))
    if "adabort" in policies:
        sc = adabort_scores(models["adabort"], rs.events)
        for th in cfg.thetas():
            rep = replay_adabort(rs, sc, float(th), cost, cfg.check_final_round)
            rows.append(efficiency_row("AdAbort", cfg.d, cfg.p, float(th), rep, seed))
    if "osla" in policies:
        g, m = osla_scores(models["osla"], rs.events)
        for c in cfg.cs():
            rows.append(efficiency_row("OSLA", cfg.d, cfg.p, float(c), replay_osla(rs, g, m, float(c), cost), seed))
    _write_rows(args, cfg, rows, "sweep", _inputs(args, models))
    _figure(args, Path(args.out).stem, report.sweep_figure, [r for r in rows if r["policy"] != "FD"])
    return 0


# -------------------------------------------------------------------- scan


def scan_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in SCAN_COLUMNS])
    return buf.getvalue()


def cmd_scan(args) -> int:
    """Fixed-depth logical error rate under full-depth decoding for every (d, p)."""
    cfg = _config(args)
    rows = []
    for d in cfg.d_values():
        for p in cfg.p_values():
            rounds = cfg.rounds or d
            circuit = build_memory_circuit(build_layout(d), rounds, p, cfg.basis)
            s = Setup(circuit, build_decoding_graph(circuit))
            k = logical_error_count(s, cfg.n_shots, cfg.master_seed, threads=args.threads)
            lo, hi = wilson_interval(k, cfg.n_shots)
            rows.append(dict(d=d, p=p, rounds=rounds, n_shots=cfg.n_shots, n_fail=k, ler=k / cfg.n_shots,
                             ci_lo=lo, ci_hi=hi, seed=cfg.master_seed))
            _log(f"d={d} p={p:g}: {k}/{cfg.n_shots} failures")
    text = scan_csv(rows)
    atomic_write_text(args.out, text)
    write_sidecar(args.out, text.encode(), cfg.echo(), command="scan")
    sys.stdout.write(text)
    _figure(args, Path(args.out).stem, report.scan_figure, rows)
    return 0


# ----------------------------------------------------------------- inspect


def cmd_inspect(args) -> int:
    """Dump the layout, circuit text and decoding graph for a configuration."""
    cfg = _config(args)
    layout = build_layout(cfg.d)
    circuit = build_memory_circuit(layout, cfg.T, cfg.p, cfg.basis)
    outputs = [(args.layout, layout.serialize), (args.circuit, circuit.to_text)]
    if args.graph:
        outputs.append((args.graph, lambda: build_decoding_graph(circuit).dump()))
    wrote = False
    for path, render in outputs:
        if path:
            text = render()
            atomic_write_text(path, text)
            write_sidecar(path, text.encode(), cfg.echo(), command="inspect")
            wrote = True
    if not wrote:
        raise UsageError("nothing to write: pass --layout, --circuit and/or --graph")
    return 0


# ---------------------------------------------------------------- selftest


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adabort", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="sampling threads (default: $ADABORT_THREADS or 1); never changes outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a shot file")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="shot file to write")
    p.add_argument("--csv", help="optional per-shot CSV export")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a predictor on a shot file")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--loss-curve", help="loss-curve CSV (default <out>.loss.csv)")
    p.add_argument("--metrics", help="metrics CSV (default <out>.metrics.csv)")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_train)

    for name, func, default, helptext in (
        ("benchmark", cmd_benchmark, "fd,osla,adabort", "compare policies on replayed shots"),
        ("sweep", cmd_sweep, "fd,osla,adabort", "efficiency over the theta and c grids"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        p.add_argument("--dataset", required=True, help="memory shot file to replay")
        p.add_argument("--adabort", help="CNN checkpoint")
        p.add_argument("--osla", help="two-head checkpoint")
        p.add_argument("--policies", default=default, help=f"comma list from {','.join(POLICIES)}")
        p.add_argument("--out", required=True, help="efficiency CSV to write")
        p.add_argument("--figures", help="directory for PNG figures")
        if name == "benchmark":
            p.add_argument("--tune-dataset", help="separate shots for tuning theta and c (default: --dataset)")
        p.set_defaults(func=func)

    p = sub.add_parser("scan", help="fixed-depth logical error rate over d_list x p_list")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("inspect", help="write layout, circuit text and decoding graph")
    _add_config_flags(p)
    p.add_argument("--layout")
    p.add_argument("--circuit")
    p.add_argument("--graph")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("selftest", help="run the bundled oracle checks")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        parser.error("--threads must be ≥ 1")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
