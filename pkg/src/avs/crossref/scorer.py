"""Training, inference helpers and weight I/O for the cross-reference scorer."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from avs.camera import CameraView
from avs.crossref.model import ScorerConfig, backward, forward, init_params, param_shapes
from avs.seeding import make_rng
from avs.tensorimg import fit_square, load_tensors, save_tensors

ADAMW_BETA1 = 0.9
ADAMW_BETA2 = 0.999
ADAMW_EPS = 1e-8


@dataclass
class TripletRecord:
    query: np.ndarray    # (S, S, 3)
    refs: np.ndarray     # (K, S, S, 3)
    target: np.ndarray   # (S, S) SSIM map, clamped to [0, 1]
    scene_id: int = 0
    iter_tag: int = 0


@dataclass
class ScorerModel:
    config: ScorerConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: ScorerConfig, seed: int = 0) -> "ScorerModel":
        return cls(config, init_params(config, seed), {"init_seed": seed})

    def forward(self, query, refs, keep_cache: bool = False):
        return forward(self.params, self.config, query, refs, keep_cache)

    def backward(self, cache, d_maps):
        return backward(self.params, self.config, cache, d_maps)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"steps": self.steps, "losses": self.losses, "val_losses": self.val_losses}


def prepare_input(img: np.ndarray, side: int) -> np.ndarray:
    """Scorer input: long-side resize plus center crop to ``side`` x ``side``."""
    return fit_square(np.asarray(img, dtype=np.float64), side)


def _stack(records: list[TripletRecord]):
    q = np.stack([r.query for r in records])
    refs = np.stack([r.refs for r in records])
    t = np.clip(np.stack([r.target for r in records]), 0.0, 1.0)
    return q, refs, t


def batch_loss(model: ScorerModel, records: list[TripletRecord]) -> float:
    q, refs, t = _stack(records)
    pred = model.forward(q, refs)
    return float(np.mean((pred - t) ** 2))


def dataset_hash(records: list[TripletRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        for a in (r.query, r.refs, r.target):
            h.update(np.ascontiguousarray(a, dtype=np.float32).tobytes())
        h.update(f"{r.scene_id}:{r.iter_tag}".encode())
    return h.hexdigest()[:16]


def train(records: list[TripletRecord], config: ScorerConfig, steps: int, seed: int = 0,
          batch_size: int = 8, lr: float = 5e-4, weight_decay: float = 1e-4,
          log_every: int = 100, val_records: list[TripletRecord] | None = None,
          model: ScorerModel | None = None) -> tuple[ScorerModel, TrainLog]:
    """AdamW on the per-pixel MSE against the clamped SSIM target.

    Batches are drawn from seeded per-epoch permutations of ``records``.
    Every ``log_every`` steps (and at step 0) the mean training loss since
    the last entry is recorded, plus the loss on ``val_records`` if given.
    """
    if not records:
        raise ValueError("empty training set")
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault(len(r.refs), []).append(i)
    if len(groups) > 1:
        raise ValueError("all training records must have the same number of references")
    model = model or ScorerModel.init(config, seed)
    if model.config != config:
        raise ValueError("model config does not match training config")
    rng = make_rng(seed, "scorer-train")
    m1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    m2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    bs = min(batch_size, len(records))
    queue: list[int] = []
    log = TrainLog()
    window: list[float] = []

    def record_log(step):
        log.steps.append(step)
        log.losses.append(float(np.mean(window)) if window else float("nan"))
        if val_records:
            log.val_losses.append(batch_loss(model, val_records))
        window.clear()

    for step in range(steps):
        if len(queue) < bs:
            queue.extend(rng.permutation(len(records)).tolist())
        idx, queue = queue[:bs], queue[bs:]
        q, refs, t = _stack([records[i] for i in idx])
        pred, cache = model.forward(q, refs, keep_cache=True)
        diff = pred - t
        window.append(float(np.mean(diff * diff)))
        if step == 0:
            record_log(0)
        grads = model.backward(cache, 2.0 * diff / diff.size)
        tstep = step + 1
        c1 = 1.0 - ADAMW_BETA1**tstep
        c2 = 1.0 - ADAMW_BETA2**tstep
        for k, p in model.params.items():
            g = grads[k]
            m1[k] = ADAMW_BETA1 * m1[k] + (1.0 - ADAMW_BETA1) * g
            m2[k] = ADAMW_BETA2 * m2[k] + (1.0 - ADAMW_BETA2) * g * g
            p *= 1.0 - lr * weight_decay
            p -= lr * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + ADAMW_EPS)
        if tstep % log_every == 0:
            record_log(tstep)
    model.meta = {**model.meta, "train_seed": seed, "steps": steps,
                  "dataset_hash": dataset_hash(records), "batch_size": bs, "lr": lr,
                  "weight_decay": weight_decay}
    return model, log


def predict_map(model: ScorerModel, query: np.ndarray, refs) -> np.ndarray:
    side = model.config.image_side
    q = prepare_input(query, side)
    r = np.stack([prepare_input(im, side) for im in refs])
    return model.forward(q, r)


def predict_quality(model: ScorerModel, query: np.ndarray, refs) -> float:
    """Mean of the predicted SSIM map, in (0, 1); higher means better."""
    refs = list(refs)
    if not refs:
        raise ValueError("at least one reference image is required")
    return float(predict_map(model, query, refs).mean())


def select_refs(pose: CameraView, available: list[CameraView], k: int) -> list[CameraView]:
    """The ``k`` views nearest to ``pose`` by camera position, never ``pose`` itself."""
    if not available:
        raise ValueError("no reference views available")
    q = pose.position
    cands = [v for v in available if v.id != pose.id]
    d = [float(np.linalg.norm(v.position - q)) for v in cands]
    order = sorted(range(len(cands)), key=lambda i: (d[i], cands[i].id))
    return [cands[i] for i in order[:k]]


def save_weights(model: ScorerModel, path) -> None:
    path = Path(path)
    save_tensors(model.params, path)
    path.with_suffix(".json").write_text(json.dumps(
        {"config": model.config.to_dict(), "meta": model.meta}, indent=1, sort_keys=True) + "\n")


def load_weights(path, expected: ScorerConfig | None = None) -> ScorerModel:
    """Load weights; raises ``ValueError`` if the stored config differs from ``expected``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    config = ScorerConfig(**meta["config"])
    if expected is not None and config != expected:
        raise ValueError(f"weights config {config} does not match expected {expected}")
    tensors = load_tensors(path)
    shapes = param_shapes(config)
    if set(tensors) != set(shapes):
        raise ValueError("weights file tensor names do not match the config")
    params = {}
    for name, shape in shapes.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ValueError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
        params[name] = tensors[name].astype(np.float64)
    return ScorerModel(config, params, meta.get("meta", {}))
