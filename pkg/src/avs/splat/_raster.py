"""Numba kernels for front-to-back compositing of circular splats.

Splats arrive already projected and sorted front to back. Each splat touches
the pixels inside its 3-sigma disc, so every pixel sees the splats in the
global sort order and the result does not depend on traversal details.
"""
import math

import numpy as np
from numba import njit

WEIGHT_CLAMP = 0.999
CUTOFF_SIGMAS = 3.0


@njit(cache=True)
def _footprint(u, v, sig, width, height):
    r = CUTOFF_SIGMAS * sig
    x0 = max(0, int(math.ceil(u - r)))
    x1 = min(width - 1, int(math.floor(u + r)))
    y0 = max(0, int(math.ceil(v - r)))
    y1 = min(height - 1, int(math.floor(v + r)))
    return x0, x1, y0, y1


@njit(cache=True)
def composite_forward(u, v, sig, depth, opac, color, bg, height, width):
    rgb = np.zeros((height, width, 3))
    dep = np.zeros((height, width))
    trans = np.ones((height, width))
    for k in range(u.shape[0]):
        s = sig[k]
        lim = (CUTOFF_SIGMAS * s) ** 2
        inv = 0.5 / (s * s)
        x0, x1, y0, y1 = _footprint(u[k], v[k], s, width, height)
        for py in range(y0, y1 + 1):
            dy = py - v[k]
            for px in range(x0, x1 + 1):
                dx = px - u[k]
                d2 = dx * dx + dy * dy
                if d2 > lim:
                    continue
                a = opac[k] * math.exp(-d2 * inv)
                if a > WEIGHT_CLAMP:
                    a = WEIGHT_CLAMP
                t = trans[py, px]
                wt = a * t
                rgb[py, px, 0] += color[k, 0] * wt
                rgb[py, px, 1] += color[k, 1] * wt
                rgb[py, px, 2] += color[k, 2] * wt
                dep[py, px] += depth[k] * wt
                trans[py, px] = t * (1.0 - a)
    for py in range(height):
        for px in range(width):
            t = trans[py, px]
            rgb[py, px, 0] += bg[0] * t
            rgb[py, px, 1] += bg[1] * t
            rgb[py, px, 2] += bg[2] * t
            alpha = 1.0 - t
            dep[py, px] = dep[py, px] / max(alpha, 1e-8) if alpha > 0.0 else 0.0
    return rgb, dep, trans


@njit(cache=True)
def composite_backward(u, v, sig, opac, color, bg, trans_final, up):
    """Gradients of ``sum(up * rgb)`` w.r.t. the projected splat attributes.

    Walks splats back to front, recovering each transmittance by division
    (the weight clamp keeps ``1 - a >= 1e-3``). Returns gradients for
    u, v, sigma, opacity (activated) and color (activated).
    """
    n = u.shape[0]
    height, width = trans_final.shape
    g_u = np.zeros(n)
    g_v = np.zeros(n)
    g_sig = np.zeros(n)
    g_op = np.zeros(n)
    g_col = np.zeros((n, 3))
    trans = trans_final.copy()
    # tail[p] = sum over splats behind the current one of c*a*T, plus bg*T_final
    tail = np.empty((height, width, 3))
    for py in range(height):
        for px in range(width):
            for ch in range(3):
                tail[py, px, ch] = bg[ch] * trans_final[py, px]
    for k in range(n - 1, -1, -1):
        s = sig[k]
        lim = (CUTOFF_SIGMAS * s) ** 2
        inv = 0.5 / (s * s)
        x0, x1, y0, y1 = _footprint(u[k], v[k], s, width, height)
        gu = 0.0
        gv = 0.0
        gs = 0.0
        go = 0.0
        c0 = color[k, 0]
        c1 = color[k, 1]
        c2 = color[k, 2]
        for py in range(y0, y1 + 1):
            dy = py - v[k]
            for px in range(x0, x1 + 1):
                dx = px - u[k]
                d2 = dx * dx + dy * dy
                if d2 > lim:
                    continue
                g = math.exp(-d2 * inv)
                a = opac[k] * g
                clamped = a > WEIGHT_CLAMP
                if clamped:
                    a = WEIGHT_CLAMP
                t = trans[py, px] / (1.0 - a)
                u0 = up[py, px, 0]
                u1 = up[py, px, 1]
                u2 = up[py, px, 2]
                wt = a * t
                g_col[k, 0] += u0 * wt
                g_col[k, 1] += u1 * wt
                g_col[k, 2] += u2 * wt
                om = 1.0 - a
                d_a = (u0 * (c0 * t - tail[py, px, 0] / om)
                       + u1 * (c1 * t - tail[py, px, 1] / om)
                       + u2 * (c2 * t - tail[py, px, 2] / om))
                tail[py, px, 0] += c0 * wt
                tail[py, px, 1] += c1 * wt
                tail[py, px, 2] += c2 * wt
                trans[py, px] = t
                if clamped:
                    continue
                go += d_a * g
                d_g = d_a * opac[k]
                # g = exp(-d2 / (2 s^2))
                gu += d_g * g * dx / (s * s)
                gv += d_g * g * dy / (s * s)
                gs += d_g * g * d2 / (s * s * s)
        g_u[k] = gu
        g_v[k] = gv
        g_sig[k] = gs
        g_op[k] = go
    return g_u, g_v, g_sig, g_op, g_col
