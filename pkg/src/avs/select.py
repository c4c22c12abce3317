"""Active view selection: greedy IQA-driven loop and baselines.

Candidate ground-truth images never travel with the candidate poses. They
sit in a :class:`GroundTruthVault` owned by the :class:`SelectionState`,
and only two code paths can read them: the oracle scorer (a benchmark
upper bound) and the reveal that happens when a view is selected for
training. Every other scorer sees the render, the reference images of
already-revealed views, and the candidate id.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from avs.camera import CameraView
from avs.crossref import ScorerModel, predict_quality, select_refs
from avs.iqa import NIQEModel, SSIMConfig, niqe_score, psnr, ssim
from avs.recon import OptimState, ReconConfig, ViewSampler, fit, init_state, schedule_points
from avs.scenegen import SceneBundle
from avs.seeding import make_rng
from avs.splat import GaussianCloud, render
from avs.tensorimg import resize_long_side

N_INITIAL = 4
DEFAULT_BUDGET = 16


class LeakageError(RuntimeError):
    """A hidden ground-truth image was requested outside the allowed paths."""


class GroundTruthVault:
    """Holds candidate images; reads go through an explicit capability check."""

    def __init__(self, images: dict[int, np.ndarray]):
        self._images = dict(images)
        self._revealed: set[int] = set()

    def __contains__(self, view_id: int) -> bool:
        return view_id in self._images

    def reveal(self, view_id: int) -> np.ndarray:
        self._revealed.add(view_id)
        return self._images[view_id]

    def revealed(self) -> frozenset[int]:
        return frozenset(self._revealed)

    def oracle_lookup(self, view_id: int) -> np.ndarray:
        """Benchmark-only read used by the oracle scorer."""
        return self._images[view_id]

    def __getstate__(self):
        raise LeakageError("the ground-truth vault is not serializable")


@dataclass
class SelectionRecord:
    ids: list[int]
    seconds: float
    render_seconds: float = 0.0
    score_seconds: float = 0.0
    scores: dict[int, float] | None = None
    checkpoint: int = 0


class SelectionState:
    """Pool ``P`` with hidden images, initial set, and the ordered selected set ``Q``."""

    def __init__(self, pool: list[CameraView], initial_ids: list[int]):
        ids = [v.id for v in pool]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate view ids in pool")
        if any(v.gt_image is None for v in pool):
            raise ValueError("pool views need ground-truth images to hide")
        self.vault = GroundTruthVault({v.id: v.gt_image for v in pool})
        self._poses = {v.id: v.without_image() for v in pool}
        missing = set(initial_ids) - set(self._poses)
        if missing:
            raise ValueError(f"initial ids not in pool: {sorted(missing)}")
        self.initial = list(initial_ids)
        self.selected: list[int] = []
        self.history: list[SelectionRecord] = []
        for i in self.initial:
            self.vault.reveal(i)

    @property
    def remaining(self) -> list[int]:
        taken = set(self.initial) | set(self.selected)
        return sorted(i for i in self._poses if i not in taken)

    def pose(self, view_id: int) -> CameraView:
        return self._poses[view_id]

    def remaining_poses(self) -> list[CameraView]:
        return [self._poses[i] for i in self.remaining]

    def add(self, ids: list[int]) -> None:
        rem = set(self.remaining)
        for i in ids:
            if i not in rem:
                raise ValueError(f"view {i} is not a remaining candidate")
            rem.discard(i)
            self.selected.append(i)
            self.vault.reveal(i)

    def training_views(self) -> list[CameraView]:
        """Initial then selected views, with their images revealed."""
        return [self._poses[i].with_image(self.vault.reveal(i))
                for i in self.initial + self.selected]


# ---------------------------------------------------------------- scorers


class Scorer(Protocol):
    name: str
    input_side: int | None

    def score(self, render_rgb: np.ndarray, refs: list[np.ndarray], view_id: int) -> float: ...


@dataclass
class OracleSSIMScorer:
    """Full-reference SSIM against the hidden image (upper bound, benchmark only)."""

    lookup: Callable[[int], np.ndarray]
    cfg: SSIMConfig = field(default_factory=SSIMConfig)
    name: str = "oracle_ssim"
    input_side: int | None = None

    def score(self, render_rgb, refs, view_id):
        return ssim(render_rgb, self.lookup(view_id), self.cfg)


@dataclass
class CrossRefScorer:
    model: ScorerModel
    name: str = "crossref"

    @property
    def input_side(self) -> int:
        return self.model.config.image_side

    def score(self, render_rgb, refs, view_id):
        return predict_quality(self.model, render_rgb, refs[:self.model.config.k_refs])


@dataclass
class NIQEScorer:
    """Negated NIQE distance so that higher means better."""

    model: NIQEModel
    input_side: int | None = 128
    name: str = "niqe"

    def score(self, render_rgb, refs, view_id):
        return -niqe_score(render_rgb, self.model)


class UniformRandomScorer:
    name = "uniform_random"
    input_side = None

    def __init__(self, seed: int):
        self.rng = make_rng(seed, "uniform-random-scorer")

    def score(self, render_rgb, refs, view_id):
        return float(self.rng.random())


# ---------------------------------------------------------------- strategies

STRATEGY_KINDS = ("random", "fvs", "greedy", "greedy_batched")
SCORER_NAMES = ("oracle_ssim", "crossref", "niqe", "uniform_random")


@dataclass(frozen=True)
class Strategy:
    kind: str
    scorer: str | None = None
    k: int = 1

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind in ("greedy", "greedy_batched"):
            if self.scorer not in SCORER_NAMES:
                raise ValueError(f"unknown scorer {self.scorer!r}")
        elif self.scorer is not None:
            raise ValueError(f"{self.kind} takes no scorer")
        if self.k < 1:
            raise ValueError("batch size k must be >= 1")
        if self.kind != "greedy_batched" and self.k != 1:
            raise ValueError("only greedy_batched takes k > 1")

    @property
    def name(self) -> str:
        if self.kind in ("random", "fvs"):
            return self.kind
        short = {"oracle_ssim": "oracle"}.get(self.scorer, self.scorer)
        return short if self.kind == "greedy" else f"{short}{self.k}"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        """``random``, ``fvs``, ``oracle``, ``crossref``, ``niqe``, ``uniform_random``,
        or a scorer name with a batch-size suffix such as ``oracle4``."""
        alias = {"oracle": "oracle_ssim", "fvs-only": None}
        if name in ("random", "fvs", "fvs-only"):
            return cls("fvs" if name.startswith("fvs") else "random")
        base = name.rstrip("0123456789")
        scorer = alias.get(base, base)
        if scorer not in SCORER_NAMES:
            raise ValueError(f"unknown strategy {name!r}")
        if base != name:
            return cls("greedy_batched", scorer, int(name[len(base):]))
        return cls("greedy", scorer)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scorer": self.scorer, "k": self.k, "name": self.name}


# ---------------------------------------------------------------- selection primitives


def fvs_order(positions: np.ndarray, ids: list[int], k: int,
              selected_positions: np.ndarray | None = None) -> list[int]:
    """Greedy max-min over camera positions.

    With no prior selection the first pick is the position farthest from
    the centroid. Ties go to the lowest id throughout.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ids = list(ids)
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the {len(ids)} available poses")
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    positions = positions[order]
    ids = [ids[i] for i in order]
    chosen: list[int] = []
    if selected_positions is None or len(selected_positions) == 0:
        if k == 0:
            return []
        d0 = np.linalg.norm(positions - positions.mean(axis=0), axis=1)
        first = int(np.argmax(d0))  # argmax returns the first (lowest id) maximum
        chosen.append(first)
        mind = np.linalg.norm(positions - positions[first], axis=1)
    else:
        sel = np.asarray(selected_positions, dtype=np.float64)
        mind = np.min(np.linalg.norm(positions[:, None, :] - sel[None, :, :], axis=2), axis=1)
    taken = np.zeros(len(ids), dtype=bool)
    taken[chosen] = True
    while len(chosen) < k:
        cand = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        taken[nxt] = True
        mind = np.minimum(mind, np.linalg.norm(positions - positions[nxt], axis=1))
    return [ids[i] for i in chosen]


def fvs_select(poses: list[CameraView], k: int) -> list[int]:
    return fvs_order(np.array([v.position for v in poses]).reshape(-1, 3),
                     [v.id for v in poses], k)


def next_views_batched(state: SelectionState | None, scores: dict[int, float], k: int) -> list[int]:
    """The ``k`` lowest-scoring ids (ties by id); moved into ``state`` when given."""
    if not scores:
        raise ValueError("empty score set")
    if k > len(scores):
        raise ValueError(f"k={k} exceeds the {len(scores)} scored candidates")
    if state is not None and set(scores) != set(state.remaining):
        raise ValueError("scores must cover exactly the remaining pool")
    chosen = sorted(scores, key=lambda i: (scores[i], i))[:k]
    if state is not None:
        state.add(chosen)
    return chosen


def next_view(state: SelectionState | None, scores: dict[int, float]) -> int:
    """Argmin of the quality scores, lowest id on ties."""
    return next_views_batched(state, scores, 1)[0]


@dataclass
class CandidateScores:
    scores: dict[int, float]
    render_seconds: dict[int, float]
    score_seconds: dict[int, float]

    @property
    def total_seconds(self) -> float:
        return float(sum(self.render_seconds.values()) + sum(self.score_seconds.values()))


def score_candidates(state: SelectionState, cloud: GaussianCloud, scorer: Scorer,
                     k_refs: int = 5, background=None) -> CandidateScores:
    """Render each remaining candidate and score it; higher means better quality.

    References are the ``k_refs`` revealed training views nearest to the
    candidate. Renders are resized to the scorer's input side before scoring.
    """
    remaining = state.remaining_poses()
    if not remaining:
        raise ValueError("empty candidate pool")
    revealed = state.training_views()
    scores, t_render, t_score = {}, {}, {}
    for pose in remaining:
        t0 = time.perf_counter()
        rgb = render(cloud, pose, background).rgb
        t1 = time.perf_counter()
        refs = [v.gt_image for v in select_refs(pose, revealed, k_refs)]
        if scorer.input_side is not None and max(rgb.shape[:2]) != scorer.input_side:
            rgb = resize_long_side(rgb, scorer.input_side)
            refs = [resize_long_side(r, scorer.input_side) for r in refs]
        scores[pose.id] = float(scorer.score(rgb, refs, pose.id))
        t2 = time.perf_counter()
        t_render[pose.id] = t1 - t0
        t_score[pose.id] = t2 - t1
    return CandidateScores(scores, t_render, t_score)


# ---------------------------------------------------------------- active loop


@dataclass
class CurvePoint:
    iteration: int
    views: int
    psnr_db: float
    ssim: float
    extra: dict = field(default_factory=dict)


@dataclass
class RunReport:
    strategy: dict
    seed: int
    recon_config: dict
    budget: int
    initial_ids: list[int]
    selected_ids: list[int]
    history: list[SelectionRecord]
    curve: list[CurvePoint]
    final_cloud: GaussianCloud | None = None
    schedule: list[int] = field(default_factory=list)

    @property
    def final(self) -> CurvePoint:
        return self.curve[-1]

    @property
    def total_selection_seconds(self) -> float:
        return float(sum(h.seconds for h in self.history))

    def to_dict(self, include_timing: bool = True, include_scores: bool = False) -> dict:
        hist = []
        for h in self.history:
            e = {"ids": h.ids, "checkpoint": h.checkpoint}
            if include_timing:
                e.update(seconds=h.seconds, render_seconds=h.render_seconds,
                         score_seconds=h.score_seconds)
            if include_scores and h.scores is not None:
                e["scores"] = {str(k): v for k, v in sorted(h.scores.items())}
            hist.append(e)
        d = {"strategy": self.strategy, "seed": self.seed, "budget": self.budget,
             "recon_config": self.recon_config, "schedule": self.schedule,
             "initial_ids": self.initial_ids, "selected_ids": self.selected_ids,
             "history": hist,
             "curve": [{"iteration": c.iteration, "views": c.views,
                        "psnr_db": _finite_or_tag(c.psnr_db), "ssim": c.ssim, **c.extra}
                       for c in self.curve]}
        if include_timing:
            d["total_selection_seconds"] = self.total_selection_seconds
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=1, sort_keys=True) + "\n"


def _finite_or_tag(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def evaluate_views(cloud: GaussianCloud, views: list[CameraView], background=None) -> tuple[float, float]:
    """Mean PSNR and mean SSIM of ``cloud`` renders against the views' images."""
    ps, ss = [], []
    for v in views:
        rgb = render(cloud, v, background).rgb
        ps.append(psnr(rgb, v.gt_image))
        ss.append(ssim(rgb, v.gt_image))
    return float(np.mean(ps)), float(np.mean(ss))


def make_scorer(strategy: Strategy, state: SelectionState, seed: int,
                crossref_model: ScorerModel | None = None,
                niqe_model: NIQEModel | None = None) -> Scorer | None:
    if strategy.scorer is None:
        return None
    if strategy.scorer == "oracle_ssim":
        return OracleSSIMScorer(state.vault.oracle_lookup)
    if strategy.scorer == "crossref":
        if crossref_model is None:
            raise ValueError("crossref strategy needs a trained scorer model")
        return CrossRefScorer(crossref_model)
    if strategy.scorer == "niqe":
        if niqe_model is None:
            raise ValueError("niqe strategy needs a fitted NIQE model")
        return NIQEScorer(niqe_model)
    return UniformRandomScorer(seed)


def run_active_loop(bundle: SceneBundle, strategy: Strategy, config: ReconConfig,
                    budget: int = DEFAULT_BUDGET, seed: int = 0, *,
                    crossref_model: ScorerModel | None = None,
                    niqe_model: NIQEModel | None = None,
                    n_initial: int = N_INITIAL, k_refs: int = 5,
                    keep_scores: bool = False,
                    evaluator: Callable[[GaussianCloud], dict] | None = None) -> RunReport:
    """Initialize with FVS, then alternate fitting to each schedule point and selecting.

    At every schedule point used for selection the current reconstruction
    is first evaluated on the test split, then ``strategy.k`` views (fewer
    for the final batch) are added. After the last selection the fit runs
    to ``config.total_iters`` and is evaluated once more. ``evaluator`` adds
    extra metrics (for example coverage) to every curve point.
    """
    pool = bundle.pool
    if budget < 0 or budget > len(pool) - n_initial:
        raise ValueError(f"budget {budget} does not fit a pool of {len(pool)} with {n_initial} initial views")
    sched = schedule_points(config.total_iters)
    n_batches = math.ceil(budget / strategy.k)
    if n_batches > len(sched):
        raise ValueError(f"{len(sched)} schedule points cannot host {n_batches} selection rounds")
    initial = fvs_select([v.without_image() for v in pool], n_initial)
    state = SelectionState(pool, initial)
    scorer = make_scorer(strategy, state, seed, crossref_model, niqe_model)
    pick_rng = make_rng(seed, "random-strategy")
    sampler = ViewSampler(make_rng(config.seed, "view-sampler"))
    opt: OptimState = init_state(config)
    bg = config.background
    curve: list[CurvePoint] = []

    def checkpoint(it):
        p, s = evaluate_views(opt.cloud, bundle.test, bg)
        extra = evaluator(opt.cloud) if evaluator else {}
        curve.append(CurvePoint(it, len(state.initial) + len(state.selected), p, s, extra))

    for b in range(n_batches):
        it = sched[b]
        opt = fit(opt, state.training_views(), config, it - opt.step, sampler)
        checkpoint(it)
        k = min(strategy.k, budget - len(state.selected))
        rec = _select(state, strategy, scorer, opt.cloud, k, pick_rng, k_refs, bg)
        rec.checkpoint = it
        if not keep_scores:
            rec.scores = None
        state.history.append(rec)
    opt = fit(opt, state.training_views(), config, config.total_iters - opt.step, sampler)
    checkpoint(config.total_iters)
    return RunReport(strategy.to_dict(), seed, config.to_dict(), budget, list(state.initial),
                     list(state.selected), state.history, curve, opt.cloud, sched[:n_batches])


def _select(state, strategy, scorer, cloud, k, rng, k_refs, bg) -> SelectionRecord:
    t0 = time.perf_counter()
    if strategy.kind == "random":
        rem = state.remaining
        chosen = sorted(rng.choice(len(rem), size=k, replace=False).tolist())
        ids = [rem[i] for i in chosen]
        state.add(ids)
        return SelectionRecord(ids, time.perf_counter() - t0)
    if strategy.kind == "fvs":
        taken = state.initial + state.selected
        rem = state.remaining_poses()
        ids = fvs_order(np.array([v.position for v in rem]), [v.id for v in rem], k,
                        np.array([state.pose(i).position for i in taken]))
        state.add(ids)
        return SelectionRecord(ids, time.perf_counter() - t0)
    cs = score_candidates(state, cloud, scorer, k_refs, bg)
    ids = next_views_batched(state, cs.scores, k)
    render_s = float(sum(cs.render_seconds.values()))
    score_s = float(sum(cs.score_seconds.values()))
    return SelectionRecord(ids, render_s + score_s, render_s, score_s, dict(cs.scores))
