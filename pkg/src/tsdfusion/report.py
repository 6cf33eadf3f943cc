"""Report output: delimited tables plus rendered figures.

Every pipeline or bench run writes CSV next to PNG figures so results can
be diffed and eyeballed without re-running anything.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import RunReport  # noqa: E402


def write_report_csv(report: RunReport, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["key", "value"])
        writer.writerows(report.as_rows())


def write_frames_csv(report: RunReport, path: str | Path) -> None:
    series = report.series
    keys = list(series.keys())
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + keys)
        for i in range(report.frames):
            writer.writerow([i] + [f"{series[k][i]:.4f}" for k in keys])


def save_report_figures(report: RunReport, out_dir: str | Path,
                        prefix: str = "report") -> list[Path]:
    """Render per-frame stage timings and block occupancy to PNG files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    s = report.series
    frames = range(report.frames)

    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in [("integrate_ms", "integrate"), ("merge_ms", "merge"),
                       ("stream_ms", "stream")]:
        ax.plot(frames, s[key], label=label, linewidth=1.2)
    ax.set_xlabel("frame")
    ax.set_ylabel("ms")
    ax.set_title("per-frame stage timings")
    ax.legend()
    fig.tight_layout()
    p = out / f"{prefix}_timings.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(frames, s["blocks_level0"], label="level 0 (fine)", linewidth=1.2)
    ax1.plot(frames, s["blocks_level1"], label="level 1 (coarse)", linewidth=1.2)
    ax1.set_ylabel("live blocks")
    ax1.legend()
    ax2.plot(frames, s["fill"], color="tab:red", linewidth=1.2)
    ax2.set_ylabel("heap fill fraction")
    ax2.set_xlabel("frame")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    p = out / f"{prefix}_blocks.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths


def write_bench_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def save_bench_figures(rows: list[dict], out_dir: str | Path) -> list[Path]:
    """Bar charts comparing bench configurations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [r["config"] for r in rows]
    paths = []
    for key, ylabel, fname in [
        ("total_s", "total pipeline time [s]", "bench_time.png"),
        ("mesh_vertices", "mesh vertices", "bench_vertices.png"),
        ("chamfer_l1", "Chamfer-L1 [m]", "bench_chamfer.png"),
    ]:
        if any(key not in r for r in rows):
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        vals = [float(r[key]) for r in rows]
        ax.bar(names, vals, color=["tab:blue", "tab:orange"][:len(rows)])
        ax.set_ylabel(ylabel)
        for i, v in enumerate(vals):
            ax.annotate(f"{v:.4g}", (i, v), ha="center", va="bottom", fontsize=8)
        fig.tight_layout()
        p = out / fname
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
