"""Byte-deterministic SVG line charts (no timestamps, fixed hash salt)."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {"svg.hashsalt": "avs", "svg.fonttype": "none", "font.size": 9}


def _mean_curves(rows, x_key):
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["strategy"]][r["views"]].append((float(r[x_key]), float(r["psnr_db"])))
    out = {}
    for s in sorted(acc):
        views = sorted(acc[s])
        xs = [np.mean([p[0] for p in acc[s][v]]) for v in views]
        ys = [np.mean([p[1] for p in acc[s][v]]) for v in views]
        out[s] = (np.array(xs), np.array(ys))
    return out


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_psnr_vs_views(rows, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for s, (x, y) in _mean_curves(rows, "views").items():
            ax.plot(x, y, marker="o", ms=3, label=s)
        ax.set_xlabel("training views")
        ax.set_ylabel("test PSNR (dB)")
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_psnr_vs_time(rows, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for s, (x, y) in _mean_curves(rows, "select_s").items():
            ax.plot(x, y, marker="o", ms=3, label=s)
        ax.set_xlabel("cumulative selection time (s)")
        ax.set_ylabel("test PSNR (dB)")
        ax.set_xscale("symlog", linthresh=1e-3)
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_bench(rows, path) -> Path:
    """Per-candidate render and score milliseconds against splat count."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        n = [r["n_splats"] for r in rows]
        ax.plot(n, [r["render_ms"] for r in rows], marker="o", label="render")
        ax.plot(n, [r["score_ms"] for r in rows], marker="s", label="crossref score")
        ax.set_xlabel("splats")
        ax.set_ylabel("ms per candidate")
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def write_plots(rows, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {"psnr_vs_views": plot_psnr_vs_views(rows, out_dir / "psnr_vs_views.svg"),
            "psnr_vs_time": plot_psnr_vs_time(rows, out_dir / "psnr_vs_time.svg")}
