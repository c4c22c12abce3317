"""``avs`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 missing or invalid data,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy")
    p.add_argument("--out")
    p.add_argument("--workers", type=int,
                   default=int(os.environ["AVS_WORKERS"]) if os.environ.get("AVS_WORKERS") else None)
    p.add_argument("--absolute-thresholds", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avs", description="Active view selection laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("scene-gen", "generate a scene bundle (cloud, rig, images)"),
        ("dataset-gen", "build the triplet corpus for the cross-reference scorer"),
        ("train-scorer", "train the cross-reference scorer on the triplet corpus"),
        ("run", "run the strategy x seed selection grid"),
        ("eval-coverage", "coverage metrics of finished runs against ground truth"),
        ("bench", "per-candidate render vs score time across splat counts"),
        ("plot", "SVG charts from a results CSV or run directory"),
        ("report", "aggregate a run directory into CSV tables and SVG charts"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("eval-coverage", "plot", "report"):
            p.add_argument("run_dir", nargs="?", help="run directory (defaults to the config's out)")
        if name == "bench":
            p.add_argument("--splats", default="500,2000,5000",
                           help="comma-separated splat counts")
            p.add_argument("--repeats", type=int, default=3)
        if name == "train-scorer":
            p.add_argument("--steps", type=int)
    return parser


def _load(args):
    from avs.harness.config import load_config, with_overrides
    cfg = load_config(args.config)
    # for the commands that read a run directory, --out names their own output
    reads_runs = args.command in ("eval-coverage", "plot", "report")
    return with_overrides(cfg, seed=args.seed, strategy=args.strategy,
                          out=None if reads_runs else args.out,
                          workers=args.workers, absolute_thresholds=args.absolute_thresholds)


def cmd_scene_gen(args, cfg) -> int:
    from avs.harness.runner import make_scene
    from avs.scenegen import save_bundle
    out = Path(args.out or "scenes")
    for seed in cfg.seeds:
        path = save_bundle(make_scene(cfg, seed), out / f"scene_{seed:03d}")
        print(path)
    return EXIT_OK


def cmd_dataset_gen(args, cfg) -> int:
    from avs.datasetgen import generate_triplets
    out = Path(args.out) if args.out else cfg.dataset_dir
    seed = args.seed if args.seed is not None else cfg.dataset_seed
    m = generate_triplets(cfg.dataset_scenes, out, cfg.dataset, seed, cfg.workers)
    print(f"{m.count} triplets from {cfg.dataset_scenes} scenes -> {out / 'manifest.json'}")
    return EXIT_OK


def cmd_train_scorer(args, cfg) -> int:
    from scipy.stats import pearsonr, spearmanr

    from avs.crossref import predict_quality, save_weights, train
    from avs.datasetgen import DatasetManifest, split_dataset
    from avs.harness.report import DataError
    if not (Path(cfg.dataset_dir) / "manifest.json").exists():
        raise DataError(f"no dataset manifest in {cfg.dataset_dir}; run dataset-gen first")
    manifest = DatasetManifest.load(cfg.dataset_dir)
    tr, va = split_dataset(manifest, cfg.train.val_fraction, cfg.train.seed)
    train_recs, val_recs = tr.load_records(), va.load_records()
    steps = args.steps if args.steps is not None else cfg.train.steps
    seed = args.seed if args.seed is not None else cfg.train.seed
    model, log = train(train_recs, cfg.scorer, steps, seed, cfg.train.batch_size,
                       val_records=val_recs[::4])
    weights = Path(args.out) if args.out else (cfg.scorer_weights or Path("scorer/weights.avst"))
    weights.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, weights)
    pred = [predict_quality(model, r.query, list(r.refs)) for r in val_recs]
    true = [float(r.target.mean()) for r in val_recs]
    summary = {"steps": steps, "seed": seed, "n_train": len(train_recs), "n_val": len(val_recs),
               "val_pearson": float(pearsonr(pred, true)[0]),
               "val_spearman": float(spearmanr(pred, true)[0]), "log": log.to_dict()}
    weights.with_name(weights.stem + "_train.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"weights -> {weights}; val pearson {summary['val_pearson']:.3f} "
          f"spearman {summary['val_spearman']:.3f}")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    from avs.harness.runner import run_grid
    run_grid(cfg)
    return EXIT_OK


def _run_dir(args, cfg) -> Path:
    return Path(args.run_dir) if getattr(args, "run_dir", None) else Path(cfg.out)


def cmd_eval_coverage(args, cfg) -> int:
    from avs.camera import CameraIntrinsics
    from avs.coverage import cloud_to_points, evaluate_coverage, save_heatmap
    from avs.harness.report import load_cells
    from avs.harness.runner import make_scene
    from avs.splat import load_cloud
    cv = cfg.coverage
    for cell in load_cells(_run_dir(args, cfg)):
        seed = cell["report"]["seed"]
        bundle = make_scene(cfg, seed)
        cloud = load_cloud(cell["dir"] / "final_cloud.avst")
        rep = evaluate_coverage(bundle.cloud, cloud, cv.thresholds, cv.absolute_thresholds,
                                n_poses=cv.n_poses, seed=seed,
                                intrinsics=CameraIntrinsics.square(cfg.scene.image_side),
                                radius=cfg.scene.radius, center=bundle.spec.center)
        (cell["dir"] / "coverage.json").write_text(rep.to_json())
        try:
            save_heatmap(cloud_to_points(bundle.cloud), cloud_to_points(cloud),
                         cell["dir"] / "heatmap.txt")
        except ValueError:
            pass
        print(f"{cell['dir'].name}: scr {rep.scr_percent:.2f}% fscore {rep.fscore_mean:.4f} "
              f"depth_mae {rep.depth_mae:.4f}")
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    from avs.crossref import ScorerModel, load_weights
    from avs.harness.bench import bench_candidates, score_time_spread
    from avs.harness.plots import plot_bench
    try:
        counts = [int(x) for x in args.splats.split(",") if x]
    except ValueError:
        raise UsageError(f"bad --splats value {args.splats!r}") from None
    if cfg.scorer_weights is not None and Path(cfg.scorer_weights).exists():
        model = load_weights(cfg.scorer_weights, cfg.scorer)
    else:
        model = ScorerModel.init(cfg.scorer, 0)
    rows = bench_candidates(counts, model, repeats=args.repeats, seed=args.seed or 0)
    out = Path(args.out or "bench")
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(
        {"rows": rows, "score_time_spread": score_time_spread(rows)}, indent=1) + "\n")
    plot_bench(rows, out / "bench.svg")
    for r in rows:
        print(f"{r['n_splats']:6d} splats: render {r['render_ms']:.3f} ms, "
              f"score {r['score_ms']:.3f} ms per candidate")
    return EXIT_OK


def cmd_plot(args, cfg) -> int:
    from avs.harness.plots import write_plots
    from avs.harness.report import collect_rows, load_cells
    run_dir = _run_dir(args, cfg)
    rows = collect_rows(load_cells(run_dir))
    for p in write_plots(rows, Path(args.out) if args.out else run_dir).values():
        print(p)
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    from avs.harness.report import write_report
    for p in write_report(_run_dir(args, cfg), args.out).values():
        print(p)
    return EXIT_OK


COMMANDS = {"scene-gen": cmd_scene_gen, "dataset-gen": cmd_dataset_gen,
            "train-scorer": cmd_train_scorer, "run": cmd_run,
            "eval-coverage": cmd_eval_coverage, "bench": cmd_bench, "plot": cmd_plot,
            "report": cmd_report}


def main(argv=None) -> int:
    from avs.harness.config import ConfigError
    from avs.harness.report import DataError, InvariantError
    from avs.tensorimg import FormatError
    try:
        args = build_parser().parse_args(argv)
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"avs: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"avs: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE if "unknown strategy" in str(e) else EXIT_DATA
    except (DataError, FormatError, FileNotFoundError) as e:
        print(f"avs: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, AssertionError) as e:
        print(f"avs: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
