"""Optional PNG figures rendered next to the CSV outputs."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the PNG bytes stable between runs
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    return path


def sweep_figure(rows: list[dict], path) -> Path:
    """Efficiency against the swept parameter, one line per (policy, d)."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    groups = defaultdict(list)
    for r in rows:
        groups[(r["policy"], r["d"], r["p"])].append(r)
    for (policy, d, p), rs in sorted(groups.items()):
        ax = axes[0] if policy == "AdAbort" else axes[1]
        xs = [abs(float(r["theta_or_c"])) for r in rs]
        ax.plot(xs, [r["eta_dec"] for r in rs], marker="o", label=f"d={d}, p={p:g}")
    axes[0].set_xlabel("abort threshold θ")
    axes[1].set_xlabel("|c| (continuation cost)")
    for ax, title in zip(axes, ("AdAbort", "OSLA")):
        ax.set_xscale("log")
        ax.set_ylabel("η_dec (1/µs)")
        ax.set_title(title)
        if ax.lines:
            ax.legend(fontsize=8)
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def benchmark_figure(rows: list[dict], path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [f"{r['policy']}\n d={r['d']}" for r in rows]
    ax.bar(range(len(rows)), [r["eta_dec"] for r in rows], color="tab:blue")
    ax.set_xticks(range(len(rows)), labels, fontsize=8)
    ax.set_ylabel("η_dec (1/µs)")
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def scan_figure(rows: list[dict], path) -> Path:
    """Logical error rate against p, one line per distance, with 95% intervals."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    by_d = defaultdict(list)
    for r in rows:
        by_d[r["d"]].append(r)
    for d, rs in sorted(by_d.items()):
        rs.sort(key=lambda r: r["p"])
        ps = [r["p"] for r in rs]
        ler = [r["ler"] for r in rs]
        err = [[r["ler"] - r["ci_lo"] for r in rs], [r["ci_hi"] - r["ler"] for r in rs]]
        ax.errorbar(ps, ler, yerr=err, marker="o", capsize=3, label=f"d={d}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("physical error rate p")
    ax.set_ylabel("logical error rate (fixed depth)")
    ax.legend()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def loss_figure(curve: list[dict], path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    epochs = [r["epoch"] for r in curve]
    ax.plot(epochs, [r["train_loss"] for r in curve], label="train loss")
    ax.plot(epochs, [r["val_loss"] for r in curve], label="validation loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["val_auc"] for r in curve], color="tab:green", linestyle="--", label="validation ROC-AUC")
    ax.set_xlabel("epoch")
    ax.set_ylabel("weighted BCE")
    ax2.set_ylabel("ROC-AUC")
    ax.legend(loc="upper left")
    ax2.legend(loc="upper right")
    out = _save(fig, Path(path))
    plt.close(fig)
    return out
