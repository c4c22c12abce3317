"""Single-scale NIQE-style no-reference quality score.

Each 32x32 patch of the MSCN field contributes ten features: the GGD shape
and variance of the MSCN coefficients, and of the four pairwise products
with the horizontal, vertical and both diagonal neighbours (symmetric GGD
for the products as well). A multivariate Gaussian is fitted to patches of
pristine images; an image's score is the Mahalanobis-like distance between
its patch statistics and the pristine model. Higher means worse.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import gammaln

from avs.iqa.ssim import gaussian_window
from avs.tensorimg import load_tensors, save_tensors, to_gray

FEATURE_VERSION = "niqe-lite-1"
PATCH = 32
MSCN_C = 1.0 / 255.0

_BETAS = np.logspace(np.log10(0.2), np.log10(10.0), 2001)
# rho(beta) = Gamma(2/b)^2 / (Gamma(1/b) Gamma(3/b)), increasing in beta
_RHO = np.exp(2.0 * gammaln(2.0 / _BETAS) - gammaln(1.0 / _BETAS) - gammaln(3.0 / _BETAS))


def mscn(img_gray: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients of a single-channel image."""
    img = np.asarray(img_gray, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ValueError("mscn needs a single-channel image")
        img = img[:, :, 0]
    # the coefficients are shift invariant; removing the minimum keeps
    # constant images exactly zero and limits cancellation in the variance
    img = img - img.min()
    k = gaussian_window(7, 7.0 / 6.0)
    mu = correlate1d(correlate1d(img, k, axis=0, mode="reflect"), k, axis=1, mode="reflect")
    sq = correlate1d(correlate1d(img * img, k, axis=0, mode="reflect"), k, axis=1, mode="reflect")
    sigma = np.sqrt(np.abs(sq - mu * mu))
    return (img - mu) / (sigma + MSCN_C)


def ggd_fit(samples) -> tuple[float, float]:
    """Moment-matching fit of a zero-mean generalized Gaussian; returns (shape, scale)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 16:
        raise ValueError("need at least 16 samples")
    second = float(np.mean(x * x))
    if second == 0.0:
        raise ValueError("all-zero input")
    first = float(np.mean(np.abs(x)))
    target = first * first / second
    beta = float(_BETAS[np.argmin(np.abs(_RHO - target))])
    # E[x^2] = alpha^2 Gamma(3/b) / Gamma(1/b)
    alpha = float(np.sqrt(second * np.exp(gammaln(1.0 / beta) - gammaln(3.0 / beta))))
    return beta, alpha


def _patch_features(coef: np.ndarray) -> list[float]:
    feats = []
    pairs = [
        coef,
        coef[:, :-1] * coef[:, 1:],     # horizontal
        coef[:-1, :] * coef[1:, :],     # vertical
        coef[:-1, :-1] * coef[1:, 1:],  # main diagonal
        coef[:-1, 1:] * coef[1:, :-1],  # anti diagonal
    ]
    for p in pairs:
        var = float(np.mean(p * p))
        if var == 0.0:
            # flat patch: degenerate but well defined statistics
            feats += [float(_BETAS[-1]), 0.0]
        else:
            beta, _ = ggd_fit(p)
            feats += [beta, var]
    return feats


def image_features(img: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """(n_patches, 10) feature matrix over non-overlapping patches."""
    gray = to_gray(img) if img.shape[-1] == 3 else img
    coef = mscn(gray)
    h, w = coef.shape
    rows = []
    for y in range(0, h - patch + 1, patch):
        for x in range(0, w - patch + 1, patch):
            rows.append(_patch_features(coef[y:y + patch, x:x + patch]))
    if not rows:
        raise ValueError(f"image {h}x{w} smaller than one {patch}px patch")
    return np.asarray(rows)


@dataclass
class NIQEModel:
    mu: np.ndarray
    covariance: np.ndarray
    version: str = FEATURE_VERSION

    def save(self, path) -> None:
        path = Path(path)
        save_tensors({"mu": self.mu, "cov": self.covariance}, path)
        path.with_suffix(".json").write_text(json.dumps({"feature_version": self.version}) + "\n")

    @classmethod
    def load(cls, path) -> "NIQEModel":
        path = Path(path)
        t = load_tensors(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta.get("feature_version") != FEATURE_VERSION:
            raise ValueError(f"feature version {meta.get('feature_version')} != {FEATURE_VERSION}")
        return cls(t["mu"].astype(np.float64), t["cov"].astype(np.float64))


def niqe_fit(pristine_images) -> NIQEModel:
    images = list(pristine_images)
    if len(images) < 10:
        raise ValueError("need at least 10 pristine images")
    feats = np.concatenate([image_features(im) for im in images])
    cov = np.cov(feats, rowvar=False)
    return NIQEModel(feats.mean(axis=0), 0.5 * (cov + cov.T))


def niqe_score(img: np.ndarray, model: NIQEModel) -> float:
    feats = image_features(img)
    nu = feats.mean(axis=0)
    cov_img = np.cov(feats, rowvar=False) if len(feats) > 1 else np.zeros_like(model.covariance)
    m = 0.5 * (cov_img + model.covariance) + 1e-6 * np.eye(len(nu))
    d = nu - model.mu
    q = float(d @ np.linalg.solve(m, d))
    return float(np.sqrt(max(q, 0.0)))
