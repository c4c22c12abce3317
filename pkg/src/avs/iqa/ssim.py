"""Full-reference metrics: per-pixel SSIM maps (with gradient) and PSNR.

Local moments use a separable, normalized Gaussian window. Borders are
padded by half-sample symmetric reflection (``d c b a | a b c d``), so the
map has the same size as the inputs. The padded 1-D filter is a dense
``(n, n)`` matrix, which makes the gradient a plain transpose.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


@dataclass
class SSIMMap:
    values: np.ndarray  # (H, W, 1)
    mean: float


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


@lru_cache(maxsize=32)
def filter_matrix(n: int, window: int, sigma: float) -> np.ndarray:
    """(n, n) matrix applying the 1-D window with symmetric reflection at the ends."""
    k = gaussian_window(window, sigma)
    r = window // 2
    if r >= n:
        raise ValueError(f"signal of length {n} too short for a {window}-tap window")
    idx = np.arange(n)[:, None] + np.arange(-r, r + 1)[None, :]
    idx = np.where(idx < 0, -idx - 1, idx)
    idx = np.where(idx >= n, 2 * n - idx - 1, idx)
    m = np.zeros((n, n))
    np.add.at(m, (np.repeat(np.arange(n), window), idx.ravel()), np.tile(k, n))
    m.flags.writeable = False
    return m


def _filter(x: np.ndarray, cfg: SSIMConfig) -> np.ndarray:
    """Gaussian blur over the two spatial axes of an (H, W, C) array."""
    mh = filter_matrix(x.shape[0], cfg.window, cfg.sigma)
    mw = filter_matrix(x.shape[1], cfg.window, cfg.sigma)
    y = mh @ np.ascontiguousarray(np.moveaxis(x, 2, 0)) @ mw.T
    return np.moveaxis(y, 0, 2)


def _filter_adjoint(g: np.ndarray, cfg: SSIMConfig) -> np.ndarray:
    """Transpose of :func:`_filter` (the reflection makes it non-self-adjoint)."""
    mh = filter_matrix(g.shape[0], cfg.window, cfg.sigma)
    mw = filter_matrix(g.shape[1], cfg.window, cfg.sigma)
    y = mh.T @ np.ascontiguousarray(np.moveaxis(g, 2, 0)) @ mw
    return np.moveaxis(y, 0, 2)


def _moments(a, b, cfg):
    c = a.shape[2]
    # one filtering pass over all five moment inputs
    m = _filter(np.concatenate([a, b, a * a, b * b, a * b], axis=2), cfg)
    mu_a, mu_b = m[..., :c], m[..., c:2 * c]
    var_a = m[..., 2 * c:3 * c] - mu_a * mu_a
    var_b = m[..., 3 * c:4 * c] - mu_b * mu_b
    cov = m[..., 4 * c:] - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) images, got {a.shape}")


def ssim_map(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig | None = None) -> SSIMMap:
    """Per-pixel SSIM, averaged over channels."""
    cfg = cfg or SSIMConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mu_a, mu_b, var_a, var_b, cov = _moments(a, b, cfg)
    num = (2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    vals = (num / den).mean(axis=2, keepdims=True)
    return SSIMMap(vals, float(vals.mean()))


def ssim(a, b, cfg: SSIMConfig | None = None) -> float:
    return ssim_map(a, b, cfg).mean


def ssim_backward(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig | None = None,
                  upstream=1.0) -> np.ndarray:
    """Gradient of ``upstream * mean_ssim(a, b)`` with respect to ``a``.

    ``upstream`` may be a scalar or an (H, W, 1) per-pixel weight on the map.
    """
    return ssim_value_and_grad(a, b, cfg, upstream)[1]


def ssim_value_and_grad(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig | None = None,
                        upstream=1.0) -> tuple[float, np.ndarray]:
    """Mean SSIM and the gradient of ``upstream * mean_ssim`` with respect to ``a``."""
    cfg = cfg or SSIMConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mu_a, mu_b, var_a, var_b, cov = _moments(a, b, cfg)
    a1 = 2.0 * mu_a * mu_b + cfg.c1
    a2 = 2.0 * cov + cfg.c2
    b1 = mu_a * mu_a + mu_b * mu_b + cfg.c1
    b2 = var_a + var_b + cfg.c2
    s = a1 * a2 / (b1 * b2)
    mean = float(s.mean(axis=2).mean())

    # d(mean over pixels and channels) -> per-element weight
    w = np.broadcast_to(np.asarray(upstream, dtype=np.float64), a.shape[:2] + (1,))
    w = w / (a.shape[0] * a.shape[1] * a.shape[2])

    d_mu = s * (2.0 * mu_b / a1 - 2.0 * mu_a / b1)
    d_var = -s / b2
    d_cov = 2.0 * s / a2
    # var_a = E[a^2] - mu_a^2, cov = E[ab] - mu_a mu_b
    g = _filter_adjoint(np.concatenate([w * (d_mu - 2.0 * mu_a * d_var - mu_b * d_cov),
                                        w * d_var, w * d_cov], axis=2), cfg)
    c = a.shape[2]
    return mean, g[..., :c] + 2.0 * a * g[..., c:2 * c] + b * g[..., 2 * c:]


def psnr(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(dynamic_range**2 / mse)
