"""Experiment configuration (JSON).

Every key is optional; missing keys take the defaults below. Example::

    {
      "scene":    {"n_splats": 300, "n_views": 60, "n_test": 20, "radius": 2.5,
                   "image_side": 64, "palette": "uniform"},
      "recon":    {"total_iters": 3000, "lr_position": 0.002, ...},
      "scorer":   {"config": {"image_side": 64, "patch": 8, ...},
                   "weights": "scorer/weights.avst"},
      "niqe":     {"model": "niqe/model.avst", "n_scenes": 4, "seed": 0},
      "dataset":  {"n_scenes": 24, "seed": 0, "dir": "dataset",
                   "snapshots": [0.05, 0.15, 0.4, 1.0], "total_iters": 2000},
      "train":    {"steps": 5000, "batch_size": 8, "seed": 0, "val_fraction": 0.2},
      "coverage": {"enabled": true, "n_poses": 100, "absolute_thresholds": false,
                   "thresholds": [0.001, 0.01, 0.1]},
      "strategies": ["random", "fvs", "niqe", "crossref", "oracle"],
      "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
      "budget": 16,
      "out": "runs",
      "workers": 1
    }

Relative paths resolve against the config file's directory (or the current
directory when no file is given).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from avs.crossref import ScorerConfig
from avs.datasetgen import DatasetConfig
from avs.recon import ReconConfig
from avs.select import Strategy

DEFAULT_STRATEGIES = ("random", "fvs", "niqe", "crossref", "oracle")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SceneConfig:
    n_splats: int = 300
    n_views: int = 60
    n_test: int = 20
    radius: float = 2.5
    image_side: int = 64
    palette: str = "uniform"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    seed: int = 0
    val_fraction: float = 0.2


@dataclass(frozen=True)
class CoverageConfig:
    enabled: bool = True
    n_poses: int = 100
    absolute_thresholds: bool = False
    thresholds: tuple = (0.001, 0.01, 0.1)


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    scorer_weights: Path | None = None
    niqe_model: Path | None = None
    niqe_scenes: int = 4
    niqe_seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dataset_scenes: int = 24
    dataset_seed: int = 0
    dataset_dir: Path = Path("dataset")
    train: TrainConfig = field(default_factory=TrainConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    strategies: tuple = DEFAULT_STRATEGIES
    seeds: tuple = tuple(range(10))
    budget: int = 16
    out: Path = Path("runs")
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.strategies:
            raise ConfigError("strategies must be non-empty")
        for s in self.strategies:
            try:
                Strategy.parse(s)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        def opt(p):
            return None if p is None else str(p)
        return {
            "scene": vars(self.scene).copy(),
            "recon": self.recon.to_dict(),
            "scorer": {"config": self.scorer.to_dict(), "weights": opt(self.scorer_weights)},
            "niqe": {"model": opt(self.niqe_model), "n_scenes": self.niqe_scenes,
                     "seed": self.niqe_seed},
            "dataset": {**self.dataset.to_dict(), "n_scenes": self.dataset_scenes,
                        "seed": self.dataset_seed, "dir": str(self.dataset_dir)},
            "train": vars(self.train).copy(),
            "coverage": {**vars(self.coverage), "thresholds": list(self.coverage.thresholds)},
            "strategies": list(self.strategies), "seeds": list(self.seeds),
            "budget": self.budget, "out": str(self.out), "workers": self.workers,
        }


def _sub(cls, d: dict, what: str):
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {what} section: {e}") from None


def from_dict(d: dict, base: Path | None = None) -> ExperimentConfig:
    base = base or Path.cwd()
    known = {"scene", "recon", "scorer", "niqe", "dataset", "train", "coverage", "strategies",
             "seeds", "budget", "out", "workers"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def path(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base / p

    cfg = ExperimentConfig()
    try:
        if "scene" in d:
            cfg.scene = _sub(SceneConfig, d["scene"], "scene")
        if "recon" in d:
            cfg.recon = ReconConfig.from_dict(d["recon"])
        sc = d.get("scorer", {})
        if "config" in sc:
            cfg.scorer = _sub(ScorerConfig, sc["config"], "scorer.config")
        cfg.scorer_weights = path(sc.get("weights", "scorer/weights.avst"))
        nq = d.get("niqe", {})
        cfg.niqe_model = path(nq.get("model"))
        cfg.niqe_scenes = int(nq.get("n_scenes", cfg.niqe_scenes))
        cfg.niqe_seed = int(nq.get("seed", cfg.niqe_seed))
        ds = dict(d.get("dataset", {}))
        cfg.dataset_scenes = int(ds.pop("n_scenes", cfg.dataset_scenes))
        cfg.dataset_seed = int(ds.pop("seed", cfg.dataset_seed))
        cfg.dataset_dir = path(ds.pop("dir", "dataset"))
        if "snapshots" in ds:
            ds["snapshots"] = tuple(ds["snapshots"])
        cfg.dataset = _sub(DatasetConfig, ds, "dataset")
        if "train" in d:
            cfg.train = _sub(TrainConfig, d["train"], "train")
        if "coverage" in d:
            cv = dict(d["coverage"])
            if "thresholds" in cv:
                cv["thresholds"] = tuple(cv["thresholds"])
            cfg.coverage = _sub(CoverageConfig, cv, "coverage")
        if "strategies" in d:
            cfg.strategies = tuple(d["strategies"])
        if "seeds" in d:
            cfg.seeds = tuple(int(s) for s in d["seeds"])
        cfg.budget = int(d.get("budget", cfg.budget))
        cfg.out = path(d.get("out", "runs"))
        cfg.workers = int(d.get("workers", os.environ.get("AVS_WORKERS", cfg.workers)))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    return cfg.validate()


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return from_dict({})
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    return from_dict(d, p.parent)


def with_overrides(cfg: ExperimentConfig, seed=None, strategy=None, out=None, workers=None,
                   absolute_thresholds=None) -> ExperimentConfig:
    cfg = replace(cfg)
    if seed is not None:
        cfg.seeds = (int(seed),)
    if strategy is not None:
        cfg.strategies = (strategy,)
    if out is not None:
        cfg.out = Path(out)
    if workers is not None:
        cfg.workers = int(workers)
    if absolute_thresholds:
        cfg.coverage = replace(cfg.coverage, absolute_thresholds=True)
    return cfg.validate()
