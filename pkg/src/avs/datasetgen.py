"""Self-supervised triplet corpus for the cross-reference scorer.

Each scene gets a reconstruction fitted from a random 8-view subset. At
each snapshot the current cloud renders every training view; the record is
that render, the nearest other training images as references, and the
SSIM map against the view's own image. Early snapshots give artifact-heavy
renders, late ones near-perfect renders.

Directory layout::

    manifest.json
    scene_0000/gt/view_0007.ppm          reference / ground-truth images
    scene_0000/it_00100/view_0007.ppm    query render (8-bit)
    scene_0000/it_00100/view_0007.pfm    SSIM target map (clamped to [0, 1])
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from avs.crossref import TripletRecord, select_refs
from avs.iqa import ssim_map
from avs.recon import ReconConfig, ViewSampler, fit, init_state
from avs.scenegen import make_bundle
from avs.seeding import make_rng
from avs.splat import render
from avs.tensorimg import load_pfm, load_ppm, quantize, save_pfm, save_ppm

DATASET_SCHEMA = 1
DEFAULT_SNAPSHOTS = (0.05, 0.15, 0.4, 1.0)


@dataclass(frozen=True)
class DatasetConfig:
    n_views: int = 8
    k_refs: int = 5
    total_iters: int = 2000
    image_side: int = 64
    n_splats: int = 300
    n_init_splats: int = 500
    snapshots: tuple = DEFAULT_SNAPSHOTS

    def __post_init__(self):
        if not self.snapshots or any(not 0.0 < f <= 1.0 for f in self.snapshots):
            raise ValueError("snapshot fractions must lie in (0, 1]")
        if self.n_views < 2:
            raise ValueError("need at least 2 views per scene")

    def snapshot_iters(self) -> list[int]:
        its = sorted({max(1, int(math.floor(f * self.total_iters + 0.5))) for f in self.snapshots})
        return its

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshots"] = [float(f) for f in self.snapshots]
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class DatasetManifest:
    records: list[dict]
    config_hash: str
    root: Path
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def scene_ids(self) -> list[int]:
        return sorted({r["scene_id"] for r in self.records})

    def to_dict(self) -> dict:
        return {"schema": DATASET_SCHEMA, "config_hash": self.config_hash, "config": self.config,
                "seed": self.seed, "count": self.count, "records": self.records}

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        if d.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unsupported dataset schema {d.get('schema')}")
        if d["count"] != len(d["records"]):
            raise ValueError("manifest count does not match its records")
        return cls(d["records"], d["config_hash"], path.parent, d.get("config", {}), d.get("seed", 0))

    def load_records(self) -> list[TripletRecord]:
        out = []
        for r in self.records:
            refs = np.stack([load_ppm(self.root / p) for p in r["refs"]])
            out.append(TripletRecord(load_ppm(self.root / r["query"]), refs,
                                     load_pfm(self.root / r["target"])[..., 0],
                                     r["scene_id"], r["iteration"]))
        return out


def scene_seed(seed: int, scene_index: int) -> int:
    """Scene seeds live in their own stream so they never collide with benchmark seeds."""
    return int(make_rng(seed, "dataset-scene", scene_index).integers(1 << 20, 1 << 40))


def _generate_scene(args) -> list[dict]:
    scene_index, seed, config, out_dir = args
    s_seed = scene_seed(seed, scene_index)
    bundle = make_bundle(s_seed, n_splats=config.n_splats, image_side=config.image_side)
    rng = make_rng(s_seed, "dataset-subset")
    pick = sorted(rng.choice(len(bundle.pool), size=config.n_views, replace=False).tolist())
    views = [bundle.pool[i] for i in pick]
    root = Path(out_dir)
    sdir = f"scene_{scene_index:04d}"
    (root / sdir / "gt").mkdir(parents=True, exist_ok=True)
    for v in views:
        save_ppm(v.gt_image, root / sdir / "gt" / f"view_{v.id:04d}.ppm")
    rconf = ReconConfig(total_iters=config.total_iters, n_init_splats=config.n_init_splats,
                        seed=s_seed)
    state = init_state(rconf)
    sampler = ViewSampler(make_rng(s_seed, "dataset-sampler"))
    records = []
    for it in config.snapshot_iters():
        state = fit(state, views, rconf, it - state.step, sampler)
        idir = root / sdir / f"it_{it:05d}"
        idir.mkdir(exist_ok=True)
        for v in views:
            # the stored 8-bit render is what the scorer will see, so score that
            query = quantize(render(state.cloud, v, rconf.background).rgb) / 255.0
            target = np.clip(ssim_map(query, v.gt_image).values, 0.0, 1.0)
            save_ppm(query, idir / f"view_{v.id:04d}.ppm")
            save_pfm(target, idir / f"view_{v.id:04d}.pfm")
            refs = select_refs(v, views, config.k_refs)
            records.append({
                "scene_id": scene_index, "scene_seed": s_seed, "iteration": it, "view_id": v.id,
                "query": f"{sdir}/it_{it:05d}/view_{v.id:04d}.ppm",
                "target": f"{sdir}/it_{it:05d}/view_{v.id:04d}.pfm",
                "refs": [f"{sdir}/gt/view_{r.id:04d}.ppm" for r in refs],
                "ref_ids": [r.id for r in refs],
                "target_mean": float(target.mean()),
            })
    return records


def generate_triplets(n_scenes: int, out_dir, config: DatasetConfig | None = None,
                      seed: int = 0, workers: int = 1) -> DatasetManifest:
    """Build the corpus under ``out_dir`` and write its manifest."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    config = config or DatasetConfig()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(i, seed, config, str(root)) for i in range(n_scenes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_generate_scene, jobs))
    else:
        parts = [_generate_scene(j) for j in jobs]
    records = [r for part in parts for r in part]
    manifest = DatasetManifest(records, config.digest(), root, config.to_dict(), seed)
    manifest.save()
    return manifest


def split_dataset(manifest: DatasetManifest, val_fraction: float,
                  seed: int = 0) -> tuple[DatasetManifest, DatasetManifest]:
    """Split by scene so validation scenes are never seen in training."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    scenes = manifest.scene_ids
    if len(scenes) < 2:
        raise ValueError("need at least 2 scenes to split")
    n_val = min(len(scenes) - 1, max(1, int(math.floor(len(scenes) * val_fraction + 0.5))))
    perm = make_rng(seed, "dataset-split").permutation(len(scenes))
    val = {scenes[i] for i in perm[:n_val]}

    def sub(keep):
        recs = [r for r in manifest.records if keep(r["scene_id"])]
        return DatasetManifest(recs, manifest.config_hash, manifest.root, manifest.config, manifest.seed)

    return sub(lambda s: s not in val), sub(lambda s: s in val)
