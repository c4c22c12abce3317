"""Aggregate cell reports into CSV tables.

Every CSV number is copied from a cell's ``report.json`` curve or its
``timing.json`` cumulative selection seconds; nothing is recomputed here.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("strategy", "seed", "views", "psnr_db", "ssim", "select_s", "scr_pct",
               "fscore", "depth_mae")


class DataError(ValueError):
    """Missing, unreadable or incomplete run data."""


class InvariantError(RuntimeError):
    """Run data that violates an internal invariant."""


def load_cells(run_dir) -> list[dict]:
    cells_root = Path(run_dir) / "cells"
    if not cells_root.is_dir():
        raise DataError(f"no run cells under {run_dir}")
    cells = []
    for d in sorted(p for p in cells_root.iterdir() if p.is_dir()):
        try:
            report = json.loads((d / "report.json").read_text())
            timing = json.loads((d / "timing.json").read_text())
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise DataError(f"cell {d.name}: {e}") from None
        cells.append({"dir": d, "report": report, "timing": timing})
    if not cells:
        raise DataError(f"run directory {run_dir} contains no cells")
    return cells


def _num(x):
    if x is None:
        return "nan"
    if isinstance(x, str):
        return x
    return repr(float(x))


def collect_rows(cells: list[dict]) -> list[dict]:
    rows = []
    for c in cells:
        rep, tim = c["report"], c["timing"]
        label = rep["strategy"].get("label", rep["strategy"]["name"])
        cum = tim["cumulative_select_s"]
        if len(cum) != len(rep["curve"]):
            raise InvariantError(f"{c['dir'].name}: timing and curve lengths differ")
        if any(b < a for a, b in zip(cum, cum[1:])) or (cum and cum[0] < 0):
            raise InvariantError(f"{c['dir'].name}: selection time is not monotone")
        for pt, sel in zip(rep["curve"], cum):
            rows.append({"strategy": label, "seed": rep["seed"], "views": pt["views"],
                         "psnr_db": pt["psnr_db"], "ssim": pt["ssim"], "select_s": sel,
                         "scr_pct": pt.get("scr_pct"), "fscore": pt.get("fscore"),
                         "depth_mae": pt.get("depth_mae")})
    rows.sort(key=lambda r: (r["strategy"], r["seed"], r["views"]))
    return rows


def check_grid(rows: list[dict]) -> None:
    """Every (strategy, seed) must have the same checkpoint set, and all seeds every strategy."""
    by_cell = defaultdict(list)
    for r in rows:
        by_cell[(r["strategy"], r["seed"])].append(r["views"])
    strategies = sorted({k[0] for k in by_cell})
    seeds = sorted({k[1] for k in by_cell})
    missing = [(s, e) for s in strategies for e in seeds if (s, e) not in by_cell]
    if missing:
        raise DataError(f"partial grid, missing cells: {missing}")
    shapes = {tuple(v) for v in by_cell.values()}
    if len(shapes) != 1:
        raise DataError("partial grid: cells have different checkpoint sets")


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r["strategy"], r["seed"], r["views"]] +
                   [_num(r[k]) for k in CSV_COLUMNS[3:]])
    return buf.getvalue()


def _mean(values):
    vals = [float(v) for v in values if v is not None and not isinstance(v, str)]
    return float(np.mean(vals)) if vals else float("nan")


def summarize(rows: list[dict]) -> list[dict]:
    """Per-strategy means of the final checkpoint (most views)."""
    finals = {}
    for r in rows:
        key = (r["strategy"], r["seed"])
        if key not in finals or r["views"] > finals[key]["views"]:
            finals[key] = r
    out = []
    for s in sorted({k[0] for k in finals}):
        fr = [r for (st, _), r in sorted(finals.items()) if st == s]
        out.append({"strategy": s, "n_seeds": len(fr), "views": fr[0]["views"],
                    **{k: _mean(r[k] for r in fr) for k in CSV_COLUMNS[3:]}})
    return out


def summary_to_csv(summary: list[dict]) -> str:
    cols = ("strategy", "n_seeds", "views") + CSV_COLUMNS[3:]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in summary:
        w.writerow([r["strategy"], r["n_seeds"], r["views"]] + [_num(r[k]) for k in CSV_COLUMNS[3:]])
    return buf.getvalue()


def write_report(run_dir, out_dir=None) -> dict[str, Path]:
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    rows = collect_rows(load_cells(run_dir))
    check_grid(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"results": out_dir / "results.csv", "summary": out_dir / "summary.csv"}
    paths["results"].write_text(rows_to_csv(rows))
    paths["summary"].write_text(summary_to_csv(summarize(rows)))
    from avs.harness.plots import write_plots
    paths.update(write_plots(rows, out_dir))
    return paths
