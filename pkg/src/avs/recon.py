"""Reconstruction: fit a splat cloud to posed images with Adam on L1 + D-SSIM.

The cloud is initialized once and then optimized in stages; the active
selection loop pauses it at :func:`schedule_points` to add views.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from avs.camera import CameraView
from avs.iqa.ssim import SSIMConfig, ssim_value_and_grad
from avs.seeding import make_rng
from avs.splat import GaussianCloud, render_backward, render_with_context
from avs.splat.cloud import PARAM_NAMES, logit
from avs.tensorimg import load_tensors, save_tensors

# view-addition iterations of the 30k-iteration reference schedule
REFERENCE_SCHEDULE = (400, 900, 1500, 2200, 3000, 3900, 4900, 6000, 7200, 8500,
                      9900, 11400, 13000, 14700, 16500, 18400)
REFERENCE_ITERS = 30000

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ReconConfig:
    total_iters: int = 3000
    lr_position: float = 2e-3
    lr_scale: float = 5e-3
    lr_color: float = 5e-3
    lr_opacity: float = 5e-3
    lambda_ssim: float = 0.2
    n_init_splats: int = 500
    init_bounds: tuple = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    seed: int = 0
    background: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if min(self.lr_position, self.lr_scale, self.lr_color, self.lr_opacity) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must be in [0, 1]")

    def learning_rates(self) -> dict[str, float]:
        return {"positions": self.lr_position, "log_scales": self.lr_scale,
                "color_logits": self.lr_color, "opacity_logits": self.lr_opacity}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_bounds"] = [list(map(float, b)) for b in self.init_bounds]
        d["background"] = list(map(float, self.background))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReconConfig":
        d = dict(d)
        if "init_bounds" in d:
            d["init_bounds"] = tuple(tuple(b) for b in d["init_bounds"])
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class OptimState:
    cloud: GaussianCloud
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step: int = 0
    losses: list[float] = field(default_factory=list)

    def copy(self) -> "OptimState":
        return OptimState(self.cloud.copy(),
                          {k: v.copy() for k, v in self.first_moment.items()},
                          {k: v.copy() for k, v in self.second_moment.items()},
                          self.step, list(self.losses))


def schedule_points(total_iters: int) -> list[int]:
    """View-addition iterations scaled from the 30k reference schedule."""
    if total_iters < 1:
        raise ValueError("total_iters must be >= 1")
    out: list[int] = []
    for k in REFERENCE_SCHEDULE:
        it = int(math.floor(total_iters * k / REFERENCE_ITERS + 0.5))
        if 0 < it < total_iters and it not in out:
            out.append(it)
    return out


def loss_and_grad(render_rgb: np.ndarray, gt: np.ndarray, lambda_ssim: float,
                  cfg: SSIMConfig | None = None) -> tuple[float, np.ndarray]:
    """``(1 - lam) * mean|r - g| + lam * (1 - mean SSIM(r, g))`` and its gradient in ``r``."""
    r = np.asarray(render_rgb, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if r.shape != g.shape:
        raise ValueError(f"dimension mismatch {r.shape} vs {g.shape}")
    diff = r - g
    loss = (1.0 - lambda_ssim) * float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    if lambda_ssim > 0.0:
        mean_ssim, d_ssim = ssim_value_and_grad(r, g, cfg)
        loss += lambda_ssim * (1.0 - mean_ssim)
        grad = grad - lambda_ssim * d_ssim
    return loss, grad


def init_state(config: ReconConfig) -> OptimState:
    rng = make_rng(config.seed, "recon-init")
    lo = np.asarray(config.init_bounds[0], dtype=np.float64)
    hi = np.asarray(config.init_bounds[1], dtype=np.float64)
    n = config.n_init_splats
    extent = float(np.max(hi - lo))
    cloud = GaussianCloud(
        lo + (hi - lo) * rng.random((n, 3)),
        np.full(n, np.log(0.05 * extent)),
        np.zeros((n, 3)),
        np.full(n, float(logit(0.1))),
    )
    zeros = {k: np.zeros_like(v) for k, v in cloud.params().items()}
    return OptimState(cloud, zeros, {k: v.copy() for k, v in zeros.items()}, 0)


def adam_step(state: OptimState, grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
    """One in-place Adam update of ``state``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name in PARAM_NAMES:
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p = getattr(state.cloud, name)
        p -= lrs[name] * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class ViewSampler:
    """Seeded round-robin: a fresh permutation of the view set per epoch."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._queue: list[int] = []
        self._n = -1

    def next(self, n_views: int) -> int:
        if n_views != self._n:
            self._queue = []
            self._n = n_views
        if not self._queue:
            self._queue = self.rng.permutation(n_views).tolist()
        return self._queue.pop()


def train_step(state: OptimState, view: CameraView, config: ReconConfig,
               ssim_cfg: SSIMConfig | None = None) -> float:
    out, ctx = render_with_context(state.cloud, view, config.background)
    loss, d_rgb = loss_and_grad(out.rgb, view.gt_image, config.lambda_ssim, ssim_cfg)
    grads = render_backward(state.cloud, view, d_rgb, config.background, context=ctx)
    adam_step(state, grads.params(), config.learning_rates())
    return loss


def fit(state: OptimState, views: list[CameraView], config: ReconConfig, iters: int,
        rng: np.random.Generator | ViewSampler) -> OptimState:
    """Run ``iters`` Adam steps, one sampled training view per step.

    Returns a new state; the input is left untouched. Pass the same
    :class:`ViewSampler` across calls to keep one round-robin stream.
    """
    if not views:
        raise ValueError("empty view set")
    if any(v.gt_image is None for v in views):
        raise ValueError("every training view needs a gt_image")
    sampler = rng if isinstance(rng, ViewSampler) else ViewSampler(rng)
    state = state.copy()
    for _ in range(iters):
        view = views[sampler.next(len(views))]
        state.losses.append(train_step(state, view, config))
    return state


def save_checkpoint(state: OptimState, config: ReconConfig, path) -> None:
    """Cloud + Adam moments in a tensor container, step and config hash in a JSON sidecar."""
    path = Path(path)
    tensors = dict(state.cloud.params())
    tensors.update({f"m1.{k}": v for k, v in state.first_moment.items()})
    tensors.update({f"m2.{k}": v for k, v in state.second_moment.items()})
    save_tensors(tensors, path)
    path.with_suffix(".json").write_text(json.dumps(
        {"step": state.step, "config_hash": config.digest(), "config": config.to_dict()},
        sort_keys=True, indent=1) + "\n")


def load_checkpoint(path, config: ReconConfig | None = None) -> OptimState:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if config is not None and meta["config_hash"] != config.digest():
        raise ValueError("checkpoint was written with a different ReconConfig")
    t = {k: v.astype(np.float64) for k, v in load_tensors(path).items()}
    cloud = GaussianCloud(**{k: t[k] for k in PARAM_NAMES})
    return OptimState(cloud, {k: t[f"m1.{k}"] for k in PARAM_NAMES},
                      {k: t[f"m2.{k}"] for k in PARAM_NAMES}, int(meta["step"]))


__all__ = ["ReconConfig", "OptimState", "ViewSampler", "schedule_points", "loss_and_grad",
           "init_state", "adam_step", "fit", "train_step", "save_checkpoint",
           "load_checkpoint"]
