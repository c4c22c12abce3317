"""Procedural ground-truth scenes, camera rigs and pool/test splits.

Scene directory layout written by :func:`save_bundle`::

    manifest.json      {"schema": 1, "spec": {...}, "test_ids": [...],
                        "views": [{"id", "rotation" (row-major 9), "translation" (3),
                                   "intrinsics": {...}, "image": "images/view_0000.ppm"}]}
    gt_cloud.avst      ground-truth cloud (tensor container)
    images/*.ppm       ground-truth renders (8-bit)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from avs.camera import CameraIntrinsics, CameraView, look_at
from avs.seeding import make_rng
from avs.splat import GaussianCloud, load_cloud, render, save_cloud
from avs.splat.cloud import logit
from avs.tensorimg import load_ppm, save_ppm

MANIFEST_SCHEMA = 1

PALETTES = {
    # saturated primaries and secondaries plus white/black, jittered per splat
    "primary": np.array([[0.9, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.2, 0.9],
                         [0.9, 0.85, 0.1], [0.1, 0.85, 0.85], [0.85, 0.1, 0.85],
                         [0.95, 0.95, 0.95], [0.05, 0.05, 0.05]]),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_splats: int = 300
    bounds: tuple = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    palette: str = "uniform"
    scale_range: tuple = (0.04, 0.10)

    def __post_init__(self):
        if self.n_splats < 1:
            raise ValueError("n_splats must be >= 1")
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        if not np.all(hi > lo):
            raise ValueError("degenerate bounds")
        if self.palette not in ("uniform", *PALETTES):
            raise ValueError(f"unknown palette {self.palette!r}")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.bounds[0], float) + np.asarray(self.bounds[1], float))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = [list(map(float, b)) for b in self.bounds]
        d["scale_range"] = list(map(float, self.scale_range))
        return d


def generate_scene(spec: SceneSpec) -> GaussianCloud:
    rng = make_rng(spec.seed, "scene")
    lo = np.asarray(spec.bounds[0], dtype=np.float64)
    hi = np.asarray(spec.bounds[1], dtype=np.float64)
    n = spec.n_splats
    pos = lo + (hi - lo) * rng.random((n, 3))
    s_lo, s_hi = np.log(spec.scale_range[0]), np.log(spec.scale_range[1])
    log_s = s_lo + (s_hi - s_lo) * rng.random(n)
    if spec.palette == "uniform":
        col = 0.05 + 0.9 * rng.random((n, 3))
    else:
        pal = PALETTES[spec.palette]
        col = pal[rng.integers(0, len(pal), n)] + rng.uniform(-0.05, 0.05, (n, 3))
    col = np.clip(col, 0.02, 0.98)
    opac = rng.uniform(0.6, 0.95, n)
    return GaussianCloud(pos, log_s, logit(col), logit(opac))


def _fibonacci_sphere(n: int, offset: float) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0)) + offset
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def generate_rig(kind: str, n: int, radius: float, seed: int = 0,
                 intrinsics: CameraIntrinsics | None = None,
                 center=(0.0, 0.0, 0.0), elevation_deg: float = 0.0) -> list[CameraView]:
    """Cameras on a sphere (Fibonacci lattice) or a horizontal orbit, all facing ``center``."""
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    intrinsics = intrinsics or CameraIntrinsics.square(64)
    center = np.asarray(center, dtype=np.float64)
    if kind == "sphere":
        offset = make_rng(seed, "rig").uniform(0.0, 2.0 * math.pi)
        dirs = _fibonacci_sphere(n, offset)
    elif kind == "orbit":
        az = 2.0 * math.pi * np.arange(n) / n
        el = math.radians(elevation_deg)
        dirs = np.stack([np.cos(az) * math.cos(el), np.sin(az) * math.cos(el),
                         np.full(n, math.sin(el))], axis=1)
    else:
        raise ValueError(f"unknown rig kind {kind!r}")
    views = []
    for i, d in enumerate(dirs):
        eye = center + radius * d / np.linalg.norm(d)
        rot, t = look_at(eye, center)
        views.append(CameraView(i, rot, t, intrinsics))
    return views


def render_gt(cloud: GaussianCloud, views: list[CameraView], background=None) -> list[CameraView]:
    return [v.with_image(render(cloud, v, background).rgb) for v in views]


def split_pool(views: list[CameraView], n_test: int, seed: int = 0):
    """Seeded shuffle, then the first ``n_test`` views become the test set.

    Both halves come back in ascending id order.
    """
    if n_test >= len(views) or n_test < 0:
        raise ValueError(f"n_test={n_test} must be in [0, {len(views)})")
    perm = make_rng(seed, "split").permutation(len(views))
    test_idx = set(perm[:n_test].tolist())
    pool = [v for i, v in enumerate(views) if i not in test_idx]
    test = [v for i, v in enumerate(views) if i in test_idx]
    return pool, test


@dataclass
class SceneBundle:
    """Ground-truth cloud, every posed view with its image, and the test split."""

    spec: SceneSpec
    cloud: GaussianCloud
    pool: list[CameraView]
    test: list[CameraView]
    extra: dict = field(default_factory=dict)

    @property
    def views(self) -> list[CameraView]:
        return sorted(self.pool + self.test, key=lambda v: v.id)


def make_bundle(seed: int, n_splats: int = 300, n_views: int = 60, n_test: int = 20,
                radius: float = 2.5, image_side: int = 64, palette: str = "uniform",
                rig: str = "sphere") -> SceneBundle:
    """The default desk scene: one seed drives the cloud, the rig and the split."""
    spec = SceneSpec(seed=seed, n_splats=n_splats, palette=palette)
    cloud = generate_scene(spec)
    views = generate_rig(rig, n_views, radius, seed, CameraIntrinsics.square(image_side),
                         center=spec.center)
    views = render_gt(cloud, views)
    pool, test = split_pool(views, n_test, seed)
    return SceneBundle(spec, cloud, pool, test,
                       {"radius": radius, "rig": rig, "n_views": n_views})


def save_bundle(bundle: SceneBundle, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for v in bundle.views:
        rel = f"images/view_{v.id:04d}.ppm"
        save_ppm(v.gt_image, out / rel)
        entries.append({"id": v.id, "rotation": v.rotation.reshape(-1).tolist(),
                        "translation": v.translation.tolist(),
                        "intrinsics": v.intrinsics.to_dict(), "image": rel})
    save_cloud(bundle.cloud, out / "gt_cloud.avst")
    manifest = {"schema": MANIFEST_SCHEMA, "spec": bundle.spec.to_dict(),
                "test_ids": sorted(v.id for v in bundle.test),
                "extra": bundle.extra, "views": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_bundle(in_dir) -> SceneBundle:
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported scene manifest schema {manifest.get('schema')}")
    spec_d = manifest["spec"]
    spec = SceneSpec(seed=spec_d["seed"], n_splats=spec_d["n_splats"],
                     bounds=tuple(tuple(b) for b in spec_d["bounds"]),
                     palette=spec_d["palette"], scale_range=tuple(spec_d["scale_range"]))
    test_ids = set(manifest["test_ids"])
    pool, test = [], []
    for e in manifest["views"]:
        view = CameraView(e["id"], np.array(e["rotation"]).reshape(3, 3), e["translation"],
                          CameraIntrinsics(**e["intrinsics"]), load_ppm(root / e["image"]))
        (test if view.id in test_ids else pool).append(view)
    return SceneBundle(spec, load_cloud(root / "gt_cloud.avst"), pool, test,
                       manifest.get("extra", {}))
