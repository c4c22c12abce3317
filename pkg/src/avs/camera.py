"""Pinhole cameras.

Pixel ``(row v, col u)`` is sampled at the integer coordinate ``(u, v)``, so a
point that projects to ``(cx, cy)`` lands exactly on a pixel centre when the
principal point is integral.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.1

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def square(cls, side: int, fov_scale: float = 1.0, near: float = 0.1) -> "CameraIntrinsics":
        """Square image with ``fx = fy = fov_scale * side`` and centred principal point."""
        f = float(fov_scale * side)
        return cls(f, f, side // 2, side // 2, side, side, near)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "near": self.near}


@dataclass
class CameraView:
    """A posed camera; ``rotation``/``translation`` map world to camera space."""

    id: int
    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: CameraIntrinsics
    gt_image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")

    @property
    def position(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def without_image(self) -> "CameraView":
        return replace(self, gt_image=None)

    def with_image(self, img: np.ndarray) -> "CameraView":
        return replace(self, gt_image=img)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation and translation for a camera at ``eye`` facing ``target``.

    Camera axes: +z forward, +x right, +y down (image rows grow downward).
    Falls back to up = +x when the view direction is parallel to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ eye
