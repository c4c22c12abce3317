"""Patch-attention regressor predicting a per-pixel SSIM map.

Query render and reference images are cut into ``patch x patch`` tiles and
linearly embedded with shared weights. Only query tokens carry a (fixed,
sinusoidal) position code. Each block is pre-norm self-attention over the
query tokens, pre-norm cross-attention from query tokens to the
concatenated reference tokens, and a pre-norm GELU FFN, all residual.
A two-layer head maps every query token to ``patch**2`` logits, and a
sigmoid turns them into scores in (0, 1).

Parameters live in a flat, insertion-ordered ``dict[str, ndarray]`` with
canonical names (see :func:`param_shapes`); gradients use the same keys.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from avs.seeding import make_rng

LN_EPS = 1e-5


@dataclass(frozen=True)
class ScorerConfig:
    image_side: int = 64
    patch: int = 8
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    ffn_dim: int = 128
    k_refs: int = 5
    query_posenc: bool = True

    def __post_init__(self):
        if self.image_side % self.patch:
            raise ValueError("image_side must be divisible by patch")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_side // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ScorerConfig) -> dict[str, tuple]:
    d, f, pin = cfg.dim, cfg.ffn_dim, cfg.patch * cfg.patch * 3
    shapes = {"patch_embed.w": (pin, d), "patch_embed.b": (d,)}
    for i in range(cfg.blocks):
        p = f"blocks.{i}"
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"{p}.{ln}.g"] = (d,)
            shapes[f"{p}.{ln}.b"] = (d,)
        for att in ("self", "cross"):
            for m in ("q", "k", "v", "o"):
                shapes[f"{p}.{att}.{m}.w"] = (d, d)
                shapes[f"{p}.{att}.{m}.b"] = (d,)
        shapes[f"{p}.ffn.fc1.w"] = (d, f)
        shapes[f"{p}.ffn.fc1.b"] = (f,)
        shapes[f"{p}.ffn.fc2.w"] = (f, d)
        shapes[f"{p}.ffn.fc2.b"] = (d,)
    shapes["head.fc1.w"] = (d, f)
    shapes["head.fc1.b"] = (f,)
    shapes["head.fc2.w"] = (f, cfg.patch * cfg.patch)
    shapes["head.fc2.b"] = (cfg.patch * cfg.patch,)
    return shapes


def init_params(cfg: ScorerConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Scaled-normal weights, zero biases, unit LN gains, and a zero final head layer."""
    rng = make_rng(seed, "scorer-init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.endswith(".b") or name == "head.fc2.w":
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
    return params


def sinusoidal_posenc(cfg: ScorerConfig) -> np.ndarray:
    """(tokens, dim) 2-D sin/cos code: half the channels for rows, half for columns."""
    g, d = cfg.grid, cfg.dim
    quarter = d // 4
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / max(quarter, 1)))
    rows, cols = np.divmod(np.arange(g * g), g)
    pe = np.zeros((g * g, d))
    for j, pos in enumerate((rows, cols)):
        ang = pos[:, None] * freqs[None, :]
        pe[:, 2 * j * quarter:(2 * j + 1) * quarter] = np.sin(ang)
        pe[:, (2 * j + 1) * quarter:(2 * j + 2) * quarter] = np.cos(ang)
    return pe


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """(..., S, S, 3) -> (..., (S/p)^2, p*p*3), row-major over the patch grid."""
    *lead, s, _, c = img.shape
    g = s // patch
    x = img.reshape(*lead, g, patch, g, patch, c)
    x = np.moveaxis(x, -4, -3)  # (..., g, g, p, p, c)
    return x.reshape(*lead, g * g, patch * patch * c)


def unpatchify(tokens: np.ndarray, patch: int) -> np.ndarray:
    """(..., g*g, p*p) -> (..., S, S)."""
    *lead, t, _ = tokens.shape
    g = int(round(math.sqrt(t)))
    x = tokens.reshape(*lead, g, g, patch, patch)
    x = np.moveaxis(x, -3, -2)  # (..., g, p, g, p)
    return x.reshape(*lead, g * patch, g * patch)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, _sum_lead(dy * xhat), _sum_lead(dy)


def _sum_lead(x):
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def _linear_grad(x, dy):
    """Weight and bias gradients of ``y = x @ w + b`` summed over leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]), _sum_lead(dy)


def _split(x, heads):
    *lead, t, d = x.shape
    return np.swapaxes(x.reshape(*lead, t, heads, d // heads), -2, -3)  # (..., h, t, dh)


def _merge(x):
    x = np.swapaxes(x, -2, -3)
    *lead, t, h, dh = x.shape
    return x.reshape(*lead, t, h * dh)


def _attn_forward(params, prefix, h, mem, heads):
    q = h @ params[f"{prefix}.q.w"] + params[f"{prefix}.q.b"]
    k = mem @ params[f"{prefix}.k.w"] + params[f"{prefix}.k.b"]
    v = mem @ params[f"{prefix}.v.w"] + params[f"{prefix}.v.b"]
    qh, kh, vh = _split(q, heads), _split(k, heads), _split(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    s = (qh @ np.swapaxes(kh, -1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    o = _merge(p @ vh)
    out = o @ params[f"{prefix}.o.w"] + params[f"{prefix}.o.b"]
    return out, (h, mem, qh, kh, vh, p, o, scale)


def _attn_backward(params, prefix, dout, cache, grads):
    h, mem, qh, kh, vh, p, o, scale = cache
    grads[f"{prefix}.o.w"], grads[f"{prefix}.o.b"] = _linear_grad(o, dout)
    do = _split(dout @ params[f"{prefix}.o.w"].T, qh.shape[-3])
    dp = do @ np.swapaxes(vh, -1, -2)
    dvh = np.swapaxes(p, -1, -2) @ do
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = np.swapaxes(ds, -1, -2) @ qh
    dq, dk, dv = _merge(dqh), _merge(dkh), _merge(dvh)
    grads[f"{prefix}.q.w"], grads[f"{prefix}.q.b"] = _linear_grad(h, dq)
    grads[f"{prefix}.k.w"], grads[f"{prefix}.k.b"] = _linear_grad(mem, dk)
    grads[f"{prefix}.v.w"], grads[f"{prefix}.v.b"] = _linear_grad(mem, dv)
    dh = dq @ params[f"{prefix}.q.w"].T
    dmem = dk @ params[f"{prefix}.k.w"].T + dv @ params[f"{prefix}.v.w"].T
    return dh, dmem


def forward(params: dict[str, np.ndarray], cfg: ScorerConfig, query: np.ndarray,
            refs: np.ndarray, keep_cache: bool = False):
    """Predicted score maps.

    ``query`` is ``(S, S, 3)`` or batched ``(B, S, S, 3)``; ``refs`` is
    ``(K, S, S, 3)`` or ``(B, K, S, S, 3)``. Returns maps of shape ``(S, S)``
    or ``(B, S, S)``, plus the backward cache when ``keep_cache`` is set.
    """
    query = np.asarray(query, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    single = query.ndim == 3
    if single:
        query, refs = query[None], refs[None]
    s = cfg.image_side
    if query.shape[1:] != (s, s, 3) or refs.shape[2:] != (s, s, 3):
        raise ValueError(f"inputs must be {s}x{s}x3, got {query.shape[1:]} and {refs.shape[2:]}")
    if refs.shape[0] != query.shape[0]:
        raise ValueError("batch size mismatch between query and refs")
    nref = refs.shape[1]
    if not 1 <= nref <= cfg.k_refs:
        raise ValueError(f"need 1..{cfg.k_refs} reference images, got {nref}")

    we, be = params["patch_embed.w"], params["patch_embed.b"]
    qp = patchify(query, cfg.patch)                            # (B, T, pin)
    rp = patchify(refs, cfg.patch)                             # (B, K, T, pin)
    rp = rp.reshape(rp.shape[0], -1, rp.shape[-1])             # (B, K*T, pin)
    x = qp @ we + be
    if cfg.query_posenc:
        x = x + sinusoidal_posenc(cfg)
    mem = rp @ we + be

    caches = []
    for i in range(cfg.blocks):
        pre = f"blocks.{i}"
        h1, ln1 = _ln_forward(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        a1, at1 = _attn_forward(params, f"{pre}.self", h1, h1, cfg.heads)
        x = x + a1
        h2, ln2 = _ln_forward(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        a2, at2 = _attn_forward(params, f"{pre}.cross", h2, mem, cfg.heads)
        x = x + a2
        h3, ln3 = _ln_forward(x, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
        z1 = h3 @ params[f"{pre}.ffn.fc1.w"] + params[f"{pre}.ffn.fc1.b"]
        g1 = _gelu(z1)
        x = x + g1 @ params[f"{pre}.ffn.fc2.w"] + params[f"{pre}.ffn.fc2.b"]
        caches.append((ln1, at1, ln2, at2, ln3, h3, z1, g1))

    zh = x @ params["head.fc1.w"] + params["head.fc1.b"]
    gh = _gelu(zh)
    logits = gh @ params["head.fc2.w"] + params["head.fc2.b"]
    out = 0.5 * (1.0 + np.tanh(0.5 * logits))
    maps = unpatchify(out, cfg.patch)
    if single:
        maps = maps[0]
    if not keep_cache:
        return maps
    cache = {"qp": qp, "rp": rp, "x": x, "zh": zh, "gh": gh, "out": out,
             "blocks": caches, "single": single, "n_refs": nref}
    return maps, cache


def backward(params: dict[str, np.ndarray], cfg: ScorerConfig, cache: dict,
             d_maps: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of ``sum(d_maps * maps)`` for every parameter."""
    d_maps = np.asarray(d_maps, dtype=np.float64)
    if cache["single"]:
        d_maps = d_maps[None]
    out = cache["out"]
    if d_maps.shape != out.shape[:-2] + (cfg.image_side, cfg.image_side):
        raise ValueError(f"upstream shape {d_maps.shape} does not match the cached forward")
    grads: dict[str, np.ndarray] = {}
    d_out = patchify(d_maps[..., None], cfg.patch)            # (B, T, p*p)
    d_logits = d_out * out * (1.0 - out)
    grads["head.fc2.w"], grads["head.fc2.b"] = _linear_grad(cache["gh"], d_logits)
    d_zh = (d_logits @ params["head.fc2.w"].T) * _gelu_grad(cache["zh"])
    grads["head.fc1.w"], grads["head.fc1.b"] = _linear_grad(cache["x"], d_zh)
    dx = d_zh @ params["head.fc1.w"].T
    dmem = np.zeros(cache["rp"].shape[:-1] + (cfg.dim,))

    for i in reversed(range(cfg.blocks)):
        pre = f"blocks.{i}"
        ln1, at1, ln2, at2, ln3, h3, z1, g1 = cache["blocks"][i]
        # FFN
        grads[f"{pre}.ffn.fc2.w"], grads[f"{pre}.ffn.fc2.b"] = _linear_grad(g1, dx)
        dz1 = (dx @ params[f"{pre}.ffn.fc2.w"].T) * _gelu_grad(z1)
        grads[f"{pre}.ffn.fc1.w"], grads[f"{pre}.ffn.fc1.b"] = _linear_grad(h3, dz1)
        dh3 = dz1 @ params[f"{pre}.ffn.fc1.w"].T
        d, grads[f"{pre}.ln3.g"], grads[f"{pre}.ln3.b"] = _ln_backward(dh3, params[f"{pre}.ln3.g"], ln3)
        dx = dx + d
        # cross-attention
        dh2, dm = _attn_backward(params, f"{pre}.cross", dx, at2, grads)
        dmem += dm
        d, grads[f"{pre}.ln2.g"], grads[f"{pre}.ln2.b"] = _ln_backward(dh2, params[f"{pre}.ln2.g"], ln2)
        dx = dx + d
        # self-attention: LN output feeds both queries and keys/values
        dq_side, dkv_side = _attn_backward(params, f"{pre}.self", dx, at1, grads)
        d, grads[f"{pre}.ln1.g"], grads[f"{pre}.ln1.b"] = _ln_backward(
            dq_side + dkv_side, params[f"{pre}.ln1.g"], ln1)
        dx = dx + d

    gw_q, gb_q = _linear_grad(cache["qp"], dx)
    gw_r, gb_r = _linear_grad(cache["rp"], dmem)
    grads["patch_embed.w"] = gw_q + gw_r
    grads["patch_embed.b"] = gb_q + gb_r
    return {name: grads[name] for name in params}
