"""Independent oracles shared by the unit and acceptance tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from avs.camera import CameraIntrinsics, CameraView, look_at
from avs.splat import GaussianCloud, project_cloud, render, render_backward
from avs.splat._raster import CUTOFF_SIGMAS, WEIGHT_CLAMP


def random_cloud(rng, n=16, spread=0.5):
    return GaussianCloud(rng.uniform(-spread, spread, (n, 3)), np.log(rng.uniform(0.05, 0.12, n)),
                         rng.normal(0.0, 1.0, (n, 3)), rng.normal(0.0, 1.0, n))


def random_view(rng, side=32, radius=2.5):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    rot, t = look_at(radius * d, np.zeros(3))
    return CameraView(0, rot, t, CameraIntrinsics.square(side))


def support_signature(cloud, view):
    """Sort order plus, per splat, the covered and the clamped pixel sets.

    The rendered image is smooth in the parameters only while this stays fixed.
    """
    p = project_cloud(cloud, view)
    k = view.intrinsics
    ys, xs = np.mgrid[0:k.height, 0:k.width]
    sig = [tuple(p.order.tolist())]
    for i in p.order:
        d2 = (xs - p.u[i]) ** 2 + (ys - p.v[i]) ** 2
        inside = d2 <= (CUTOFF_SIGMAS * p.sigma[i]) ** 2
        a = cloud.opacities[i] * np.exp(-d2 / (2.0 * p.sigma[i] ** 2))
        sig.append((np.flatnonzero(inside).tobytes(),
                    np.flatnonzero(inside & (a > WEIGHT_CLAMP)).tobytes()))
    return sig


def _objective(cloud, view, up):
    return float(np.sum(up * render(cloud, view).rgb))


def _perturbed(cloud, name, idx, delta):
    c = cloud.copy()
    getattr(c, name)[idx] += delta
    return c


def renderer_fd_samples(seed, count, h=1e-3, n_splats=16, side=32):
    """``count`` (name, idx, analytic, fd) tuples at smooth points of one seeded scene.

    The finite difference is the central 4-point stencil with step ``h``.
    Parameters whose support signature changes within +-2h sit on a
    discontinuity of the hard cutoff/clamp/sort, where no derivative exists;
    they are redrawn.
    """
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, n_splats)
    view = random_view(rng, side)
    up = rng.normal(size=(side, side, 3))
    grads = render_backward(cloud, view, up)
    base = support_signature(cloud, view)
    names = ["positions", "log_scales", "color_logits", "opacity_logits"]
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 50 * count:
            raise RuntimeError("could not find enough smooth parameters")
        name = names[len(out) % 4]
        arr = getattr(cloud, name)
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        shifted = [_perturbed(cloud, name, idx, m * h) for m in (2, 1, -1, -2)]
        if any(support_signature(c, view) != base for c in shifted):
            continue
        f2, f1, fm1, fm2 = (_objective(c, view, up) for c in shifted)
        fd = (-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * h)
        out.append((name, idx, float(getattr(grads, name)[idx]), fd))
    return out


def rel_error(analytic, fd):
    return abs(analytic - fd) / max(abs(fd), 1e-6)


def brute_ssim_mean(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Direct 2-D windowed sums over a symmetric-reflect padded image.

    Every output pixel takes the full (window x window) weighted sum of its
    neighbourhood; nothing is separated or factored.
    """
    x = np.arange(window) - (window - 1) / 2.0
    g1 = np.exp(-x * x / (2.0 * sigma * sigma))
    w2 = np.outer(g1, g1)
    w2 /= w2.sum()
    r = window // 2
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    total, count = 0.0, 0
    for c in range(a.shape[2]):
        wa = sliding_window_view(np.pad(a[..., c], r, mode="symmetric"), (window, window))
        wb = sliding_window_view(np.pad(b[..., c], r, mode="symmetric"), (window, window))
        ma = np.einsum("ijkl,kl->ij", wa, w2)
        mb = np.einsum("ijkl,kl->ij", wb, w2)
        va = np.einsum("ijkl,kl->ij", wa * wa, w2) - ma * ma
        vb = np.einsum("ijkl,kl->ij", wb * wb, w2) - mb * mb
        cv = np.einsum("ijkl,kl->ij", wa * wb, w2) - ma * mb
        m = ((2 * ma * mb + c1) * (2 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        total += m.sum()
        count += m.size
    return total / count


def exhaustive_fvs_check(points, order, tol=1e-9):
    """True when every prefix of ``order`` is a greedy max-min choice.

    At each step the chosen point must attain the maximum, over all
    unchosen points, of the minimum distance to the chosen prefix (for the
    first pick: distance to the centroid). Values within ``tol`` count as
    ties, since two formulas for the same distance can differ in the last
    bit; exact tie-breaking is checked separately.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    centroid = pts.mean(axis=0)
    chosen = []
    for step, pick in enumerate(order):
        vals = {}
        for i in range(n):
            if i in chosen:
                continue
            if step == 0:
                vals[i] = math.dist(pts[i], centroid)
            else:
                vals[i] = min(math.dist(pts[i], pts[j]) for j in chosen)
        if pick not in vals or vals[pick] < max(vals.values()) - tol:
            return False
        chosen.append(pick)
    return True


def best_maxmin_value(points, k):
    """Exhaustive optimum of min pairwise distance over all k-subsets."""
    pts = np.asarray(points, dtype=float)
    best = -math.inf
    for comb in itertools.combinations(range(len(pts)), k):
        if k < 2:
            return math.inf
        v = min(math.dist(pts[i], pts[j]) for i, j in itertools.combinations(comb, 2))
        best = max(best, v)
    return best
