"""Figure rendering for run outputs.

Every figure is derived from the delimited files the runner writes, so
plots can be regenerated from any output directory without re-running
the experiment.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_metrics(path: str) -> dict[str, list]:
    cols: dict[str, list] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            for key, raw in row.items():
                cols.setdefault(key, []).append(float(raw) if raw != "" else None)
    return cols


def _series(cols, key):
    xs, ys = [], []
    for e, v in zip(cols["epoch"], cols[key]):
        if v is not None:
            xs.append(e)
            ys.append(v)
    return xs, ys


def render_run_figures(out_dir: str) -> list[str]:
    """Render loss / sharpness / orthogonality-residual curves next to
    metrics.csv.  Returns the paths written."""
    cols = _read_metrics(os.path.join(out_dir, "metrics.csv"))
    written = []
    panels = [
        ("loss", "training loss", False),
        ("sharpness", "sharpness estimate", False),
        ("ortho_residual", r"$\|W^\top W - I\|_F^2$", True),
    ]
    for key, label, logscale in panels:
        xs, ys = _series(cols, key)
        if not ys:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker=".", lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        if logscale and min(ys) > 0:
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{key}.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def render_comparison(run_dirs: list[str], labels: list[str], out_path: str) -> str:
    """Three-panel overlay (loss, sharpness, orthogonality residual) of
    several runs, one curve per run."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    panels = [
        ("loss", "training loss", False),
        ("sharpness", "sharpness estimate", False),
        ("ortho_residual", r"$\|W^\top W - I\|_F^2$", True),
    ]
    for run_dir, label in zip(run_dirs, labels):
        cols = _read_metrics(os.path.join(run_dir, "metrics.csv"))
        for ax, (key, _, _) in zip(axes, panels):
            xs, ys = _series(cols, key)
            if ys:
                ax.plot(xs, ys, lw=1.2, label=label)
    for ax, (key, ylabel, logscale) in zip(axes, panels):
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        if logscale:
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_spectrum_figure(csv_path: str, out_path: str) -> str:
    """Weighted stem plot of the Ritz values, all probes overlaid."""
    vals, weights = [], []
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            vals.append(float(row["ritz_value"]))
            weights.append(float(row["weight"]))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    markerline, stemlines, _ = ax.stem(vals, weights)
    plt.setp(markerline, markersize=4)
    plt.setp(stemlines, lw=1)
    ax.set_xlabel("Ritz value")
    ax.set_ylabel("weight")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_compare_epsilon_figure(csv_path: str, out_path: str) -> str:
    """Grouped bars of per-step wall time, exact vs approximate solver."""
    dims, approx_ms, exact_ms = [], [], []
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            dims.append(f"St({row['p']},{row['n']})")
            approx_ms.append(float(row["approx_step_ms"]))
            exact_ms.append(
                float(row["exact_step_ms"]) if row["exact_step_ms"] else float("nan")
            )
    x = range(len(dims))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    width = 0.38
    ax.bar([i - width / 2 for i in x], approx_ms, width, label="approx")
    ax.bar([i + width / 2 for i in x], exact_ms, width, label="exact")
    ax.set_xticks(list(x))
    ax.set_xticklabels(dims)
    ax.set_ylabel("per-step wall time [ms]")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
