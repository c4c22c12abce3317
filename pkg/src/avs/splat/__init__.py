"""Differentiable renderer for isotropic 3D Gaussian splats."""
from avs.splat.cloud import CloudGradients, GaussianCloud, load_cloud, save_cloud, sigmoid
from avs.splat.render import (
    DEFAULT_BACKGROUND,
    RenderOutput,
    Projection,
    project,
    project_cloud,
    render,
    render_backward,
    render_with_context,
)

__all__ = [
    "CloudGradients",
    "DEFAULT_BACKGROUND",
    "GaussianCloud",
    "Projection",
    "RenderOutput",
    "load_cloud",
    "project",
    "project_cloud",
    "render",
    "render_backward",
    "render_with_context",
    "save_cloud",
    "sigmoid",
]
