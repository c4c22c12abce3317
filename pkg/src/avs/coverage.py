"""Scene-coverage metrics between a reference and a subset reconstruction.

Clouds become point sets through their splat centers. Nearest neighbours
come from an exact kd-tree; distances are recomputed from the returned
indices so they agree bit for bit with a brute-force search.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from avs.camera import CameraIntrinsics
from avs.scenegen import generate_rig
from avs.splat import GaussianCloud, render

DEFAULT_THRESHOLDS = (0.001, 0.01, 0.1)


def cloud_to_points(cloud: GaussianCloud, opacity_min: float = 0.5) -> np.ndarray:
    """Centers of splats whose opacity is at least ``opacity_min``."""
    pts = cloud.positions[cloud.opacities >= opacity_min]
    if len(pts) == 0:
        raise ValueError(f"no splat reaches opacity {opacity_min}")
    return pts.copy()


def _check(points, name) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or len(p) == 0:
        raise ValueError(f"{name} must be a non-empty (N, 3) array")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has non-finite coordinates")
    return p


def _row_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sqrt(np.sum(d * d, axis=1))


def nn_distances(src, dst) -> np.ndarray:
    """Euclidean distance from every ``src`` point to its nearest ``dst`` point."""
    src = _check(src, "from")
    dst = _check(dst, "to")
    _, idx = cKDTree(dst).query(src, k=1)
    return _row_dist(src, dst[idx])


def nn_distances_brute(src, dst, chunk: int = 512) -> np.ndarray:
    """O(n*m) reference search with the same distance arithmetic as :func:`nn_distances`."""
    src = _check(src, "from")
    dst = _check(dst, "to")
    out = np.empty(len(src))
    for s in range(0, len(src), chunk):
        a = src[s:s + chunk]
        diff = a[:, None, :] - dst[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        out[s:s + chunk] = _row_dist(a, dst[np.argmin(sq, axis=1)])
    return out


def extent(points) -> float:
    """Diagonal of the axis-aligned bounding box."""
    p = _check(points, "reference")
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def _extent_checked(reference) -> float:
    e = extent(reference)
    if e <= 0.0:
        raise ValueError("degenerate reference cloud (zero extent)")
    return e


def scr(reference, subset, tau_rel: float = 0.01) -> float:
    """Percent of reference points within ``tau_rel * extent`` of the subset."""
    tau = tau_rel * _extent_checked(reference)
    d = nn_distances(reference, subset)
    return 100.0 * float(np.count_nonzero(d <= tau)) / len(d)


def fscore(reference, subset, thresholds=DEFAULT_THRESHOLDS,
           absolute: bool = False) -> tuple[list[float], float]:
    """Per-threshold F-scores and their mean.

    Thresholds are fractions of the reference extent unless ``absolute``.
    """
    scale = 1.0 if absolute else _extent_checked(reference)
    d_ref = nn_distances(reference, subset)   # recall side
    d_sub = nn_distances(subset, reference)   # precision side
    out = []
    for t in thresholds:
        r = float(np.mean(d_ref <= t * scale))
        p = float(np.mean(d_sub <= t * scale))
        out.append(0.0 if p + r == 0.0 else 2.0 * p * r / (p + r))
    return out, float(np.mean(out))


def depth_mae(reference: GaussianCloud, subset: GaussianCloud, n_poses: int = 100,
              seed: int = 0, intrinsics: CameraIntrinsics | None = None,
              radius: float = 2.5, center=(0.0, 0.0, 0.0), alpha_min: float = 0.5) -> float:
    """Mean absolute depth difference over pixels both clouds cover, averaged over poses.

    Poses are a seeded Fibonacci sphere around ``center``. Poses without a
    mutually covered pixel are skipped; if none remain it is an error.
    """
    intrinsics = intrinsics or CameraIntrinsics.square(64)
    views = generate_rig("sphere", n_poses, radius, seed, intrinsics, center)
    per_pose = []
    for v in views:
        a = render(reference, v)
        b = render(subset, v)
        mask = (a.alpha[..., 0] > alpha_min) & (b.alpha[..., 0] > alpha_min)
        if mask.any():
            per_pose.append(float(np.mean(np.abs(a.depth[..., 0][mask] - b.depth[..., 0][mask]))))
    if not per_pose:
        raise ValueError("no pixel is covered by both reconstructions")
    return float(np.mean(per_pose))


@dataclass
class CoverageReport:
    scr_percent: float
    fscore_mean: float
    fscore_per_threshold: list[float]
    depth_mae: float
    thresholds: list[float]
    absolute_thresholds: bool = False
    tau_rel: float = 0.01
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.depth_mae, float) and math.isnan(self.depth_mae):
            d["depth_mae"] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def evaluate_coverage(reference: GaussianCloud, subset: GaussianCloud,
                      thresholds=DEFAULT_THRESHOLDS, absolute: bool = False,
                      tau_rel: float = 0.01, n_poses: int = 100, seed: int = 0,
                      intrinsics: CameraIntrinsics | None = None, radius: float = 2.5,
                      center=(0.0, 0.0, 0.0), opacity_min: float = 0.5) -> CoverageReport:
    """All coverage metrics; a subset with no opaque splat scores 0 with NaN depth error."""
    ref_pts = cloud_to_points(reference, opacity_min)
    try:
        sub_pts = cloud_to_points(subset, opacity_min)
    except ValueError:
        return CoverageReport(0.0, 0.0, [0.0] * len(thresholds), float("nan"),
                              list(thresholds), absolute, tau_rel)
    per, mean = fscore(ref_pts, sub_pts, thresholds, absolute)
    try:
        mae = depth_mae(reference, subset, n_poses, seed, intrinsics, radius, center)
    except ValueError:
        mae = float("nan")
    return CoverageReport(scr(ref_pts, sub_pts, tau_rel), mean, per, mae, list(thresholds),
                          absolute, tau_rel)


def heatmap_lines(reference, subset) -> str:
    """``x y z d`` per reference point, ``d`` its distance to the subset."""
    ref = _check(reference, "reference")
    d = nn_distances(ref, subset)
    return "".join(f"{x:.6f} {y:.6f} {z:.6f} {dd:.6f}\n" for (x, y, z), dd in zip(ref, d))


def save_heatmap(reference, subset, path) -> None:
    with open(path, "w") as f:
        f.write(heatmap_lines(reference, subset))
