from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avs.camera import CameraView
from avs.splat import _raster
from avs.splat.cloud import CloudGradients, GaussianCloud, sigmoid

DEFAULT_BACKGROUND = (0.5, 0.5, 0.5)


@dataclass
class RenderOutput:
    rgb: np.ndarray    # (H, W, 3)
    depth: np.ndarray  # (H, W, 1), 0 where nothing was hit
    alpha: np.ndarray  # (H, W, 1)


@dataclass
class Projection:
    """Per-splat screen-space footprint; ``order`` lists visible splats front to back."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    sigma: np.ndarray
    cam: np.ndarray      # camera-space positions (N, 3)
    visible: np.ndarray  # bool (N,)
    order: np.ndarray    # indices of visible splats sorted by (depth, index)


def project(position, view: CameraView, log_scale: float = 0.0):
    """Project one point; returns ``(u, v, depth, sigma2d)`` or ``None`` when culled."""
    k = view.intrinsics
    xc = view.rotation @ np.asarray(position, dtype=np.float64) + view.translation
    z = xc[2]
    if z <= k.near:
        return None
    return (k.fx * xc[0] / z + k.cx, k.fy * xc[1] / z + k.cy, z,
            float(np.exp(log_scale)) * k.fx / z)


def project_cloud(cloud: GaussianCloud, view: CameraView) -> Projection:
    k = view.intrinsics
    cam = cloud.positions @ view.rotation.T + view.translation
    z = cam[:, 2]
    visible = z > k.near
    zs = np.where(visible, z, 1.0)
    u = k.fx * cam[:, 0] / zs + k.cx
    v = k.fy * cam[:, 1] / zs + k.cy
    sigma = np.exp(cloud.log_scales) * k.fx / zs
    idx = np.flatnonzero(visible)
    # stable sort keeps index order on depth ties
    order = idx[np.argsort(z[idx], kind="stable")]
    return Projection(u, v, z, sigma, cam, visible, order)


def _background(background) -> np.ndarray:
    bg = np.asarray(DEFAULT_BACKGROUND if background is None else background, dtype=np.float64)
    if bg.shape != (3,):
        raise ValueError("background must be an RGB triple")
    return bg


def _rasterize(cloud: GaussianCloud, view: CameraView, bg: np.ndarray):
    k = view.intrinsics
    if len(cloud) == 0:
        rgb = np.broadcast_to(bg, (k.height, k.width, 3)).copy()
        zeros = np.zeros((k.height, k.width, 1))
        return RenderOutput(rgb, zeros, zeros.copy()), None
    p = project_cloud(cloud, view)
    o = p.order
    rgb, dep, trans = _raster.composite_forward(
        p.u[o], p.v[o], p.sigma[o], p.depth[o], cloud.opacities[o],
        np.ascontiguousarray(cloud.colors[o]), bg, k.height, k.width)
    return RenderOutput(rgb, dep[..., None], (1.0 - trans)[..., None]), (p, trans)


def render(cloud: GaussianCloud, view: CameraView, background=None) -> RenderOutput:
    """Composite the cloud front to back as seen from ``view``.

    Per pixel the weight of splat i is ``opacity * exp(-d^2 / (2 sigma^2))``,
    clamped to 0.999 and zero beyond ``3 sigma``. Depth is the
    alpha-normalized expected depth.
    """
    return _rasterize(cloud, view, _background(background))[0]


def render_with_context(cloud: GaussianCloud, view: CameraView, background=None):
    """Like :func:`render`, also returning the state :func:`render_backward` can reuse."""
    return _rasterize(cloud, view, _background(background))


def render_backward(cloud: GaussianCloud, view: CameraView, upstream: np.ndarray,
                    background=None, context=None) -> CloudGradients:
    """Gradient of ``sum(upstream * render(cloud, view).rgb)`` w.r.t. the cloud parameters.

    ``context`` is the second value of :func:`render_with_context` for the
    same cloud, view and background; without it the forward pass is redone.
    """
    bg = _background(background)
    k = view.intrinsics
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (k.height, k.width, 3):
        raise ValueError(f"upstream shape {upstream.shape} != {(k.height, k.width, 3)}")
    grads = CloudGradients.zeros_like(cloud)
    if len(cloud) == 0:
        return grads
    if context is None:
        context = _rasterize(cloud, view, bg)[1]
    p, trans = context
    o = p.order
    if o.size == 0:
        return grads
    u, v, sig = p.u[o], p.v[o], p.sigma[o]
    op_o = cloud.opacities[o]
    col_o = np.ascontiguousarray(cloud.colors[o])
    g_u, g_v, g_sig, g_op, g_col = _raster.composite_backward(
        u, v, sig, op_o, col_o, bg, trans, np.ascontiguousarray(upstream))

    grads.color_logits[o] = g_col * col_o * (1.0 - col_o)
    grads.opacity_logits[o] = g_op * op_o * (1.0 - op_o)
    # sigma = exp(log_scale) * fx / z
    grads.log_scales[o] = g_sig * sig

    cam = p.cam[o]
    z = cam[:, 2]
    g_cam = np.empty((o.size, 3))
    g_cam[:, 0] = g_u * k.fx / z
    g_cam[:, 1] = g_v * k.fy / z
    g_cam[:, 2] = (-g_u * k.fx * cam[:, 0] / z**2
                   - g_v * k.fy * cam[:, 1] / z**2
                   - g_sig * sig / z)
    grads.positions[o] = g_cam @ view.rotation
    return grads


__all__ = ["RenderOutput", "Projection", "project", "project_cloud", "render",
           "render_backward", "render_with_context", "sigmoid", "DEFAULT_BACKGROUND"]
