"""Strategy x seed grid execution.

Each cell writes into its own directory::

    <out>/cells/<strategy>__seed<NNN>/report.json      deterministic RunReport
    <out>/cells/<strategy>__seed<NNN>/timing.json      wall-clock measurements
    <out>/cells/<strategy>__seed<NNN>/final_cloud.avst

``report.json`` holds no timings so that reruns are byte-identical.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from avs.camera import CameraIntrinsics
from avs.coverage import evaluate_coverage
from avs.crossref import load_weights
from avs.harness.config import ConfigError, ExperimentConfig
from avs.iqa import NIQEModel, niqe_fit
from avs.scenegen import SceneBundle, make_bundle
from avs.seeding import make_rng
from avs.select import RunReport, Strategy, run_active_loop
from avs.splat import save_cloud
from avs.tensorimg import resize_long_side

NIQE_SIDE = 128


def make_scene(cfg: ExperimentConfig, seed: int) -> SceneBundle:
    s = cfg.scene
    return make_bundle(seed, n_splats=s.n_splats, n_views=s.n_views, n_test=s.n_test,
                       radius=s.radius, image_side=s.image_side, palette=s.palette)


def fit_niqe_model(cfg: ExperimentConfig) -> NIQEModel:
    """Pristine statistics from ground-truth images of scenes outside the benchmark seeds."""
    images = []
    for i in range(cfg.niqe_scenes):
        seed = int(make_rng(cfg.niqe_seed, "niqe-scene", i).integers(1 << 41, 1 << 42))
        for v in make_scene(cfg, seed).views:
            images.append(resize_long_side(v.gt_image, NIQE_SIDE))
    return niqe_fit(images)


def load_or_fit_niqe(cfg: ExperimentConfig) -> NIQEModel:
    path = cfg.niqe_model
    if path is not None and Path(path).exists():
        return NIQEModel.load(path)
    model = fit_niqe_model(cfg)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
    return model


def cell_dir(out: Path, strategy: str, seed: int) -> Path:
    return Path(out) / "cells" / f"{strategy}__seed{seed:03d}"


def _coverage_evaluator(cfg: ExperimentConfig, bundle: SceneBundle, seed: int):
    if not cfg.coverage.enabled:
        return None
    cv = cfg.coverage
    intr = CameraIntrinsics.square(cfg.scene.image_side)

    def evaluate(cloud):
        rep = evaluate_coverage(bundle.cloud, cloud, cv.thresholds, cv.absolute_thresholds,
                                n_poses=cv.n_poses, seed=seed, intrinsics=intr,
                                radius=cfg.scene.radius, center=bundle.spec.center)
        mae = rep.depth_mae
        return {"scr_pct": rep.scr_percent, "fscore": rep.fscore_mean,
                "depth_mae": None if math.isnan(mae) else mae}

    return evaluate


def run_cell(cfg: ExperimentConfig, strategy_name: str, seed: int, niqe_model=None) -> Path:
    strategy = Strategy.parse(strategy_name)
    crossref_model = None
    if strategy.scorer == "crossref":
        if cfg.scorer_weights is None or not Path(cfg.scorer_weights).exists():
            raise ConfigError(f"crossref strategy needs scorer weights (got {cfg.scorer_weights})")
        crossref_model = load_weights(cfg.scorer_weights, cfg.scorer)
    if strategy.scorer == "niqe" and niqe_model is None:
        niqe_model = load_or_fit_niqe(cfg)
    bundle = make_scene(cfg, seed)
    recon = type(cfg.recon).from_dict({**cfg.recon.to_dict(), "seed": seed})
    t0 = time.perf_counter()
    report = run_active_loop(bundle, strategy, recon, cfg.budget, seed,
                             crossref_model=crossref_model, niqe_model=niqe_model,
                             evaluator=_coverage_evaluator(cfg, bundle, seed))
    wall = time.perf_counter() - t0
    out = cell_dir(cfg.out, strategy_name, seed)
    out.mkdir(parents=True, exist_ok=True)
    report_dict = report.to_dict(include_timing=False)
    report_dict["strategy"]["label"] = strategy_name
    (out / "report.json").write_text(json.dumps(report_dict, indent=1, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing_dict(report, wall), indent=1,
                                                sort_keys=True) + "\n")
    save_cloud(report.final_cloud, out / "final_cloud.avst")
    return out


def timing_dict(report: RunReport, wall_seconds: float) -> dict:
    """Per-selection seconds and the cumulative selection time at every curve point."""
    cum, acc = [], 0.0
    for i in range(len(report.curve)):
        cum.append(acc)
        if i < len(report.history):
            acc += report.history[i].seconds
    if report.curve:
        cum[-1] = acc
    return {"history": [{"ids": h.ids, "seconds": h.seconds, "render_seconds": h.render_seconds,
                         "score_seconds": h.score_seconds} for h in report.history],
            "cumulative_select_s": cum,
            "total_selection_seconds": report.total_selection_seconds,
            "wall_seconds": wall_seconds}


def _cell_job(args):
    cfg, strategy, seed, niqe = args
    return str(run_cell(cfg, strategy, seed, niqe))


def run_grid(cfg: ExperimentConfig, log=print) -> list[Path]:
    """Run every (strategy, seed) cell, in parallel when ``cfg.workers > 1``."""
    niqe = load_or_fit_niqe(cfg) if any(Strategy.parse(s).scorer == "niqe"
                                        for s in cfg.strategies) else None
    if any(Strategy.parse(s).scorer == "crossref" for s in cfg.strategies):
        if cfg.scorer_weights is None or not Path(cfg.scorer_weights).exists():
            raise ConfigError(f"crossref strategy needs scorer weights (got {cfg.scorer_weights})")
    jobs = [(cfg, s, seed, niqe) for s in cfg.strategies for seed in cfg.seeds]
    out = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            for (_, s, seed, _), p in zip(jobs, ex.map(_cell_job, jobs)):
                log(f"done {s} seed {seed}")
                out.append(Path(p))
    else:
        for job in jobs:
            out.append(Path(_cell_job(job)))
            log(f"done {job[1]} seed {job[2]}")
    return out
