"""Per-candidate render vs score cost as scene complexity grows."""
from __future__ import annotations

import time

import numpy as np

from avs.camera import CameraIntrinsics
from avs.crossref import ScorerConfig, ScorerModel
from avs.scenegen import SceneSpec, generate_rig, generate_scene
from avs.select import CrossRefScorer
from avs.splat import render

DEFAULT_COUNTS = (500, 2000, 5000)


def bench_candidates(splat_counts=DEFAULT_COUNTS, model: ScorerModel | None = None,
                     n_candidates: int = 20, n_refs: int = 5, repeats: int = 3,
                     seed: int = 0, image_side: int | None = None) -> list[dict]:
    """Median per-candidate milliseconds for rendering and for crossref scoring.

    The scorer input is fixed by its config, so only the render should
    depend on the splat count.
    """
    model = model or ScorerModel.init(ScorerConfig(), seed)
    side = image_side or model.config.image_side
    scorer = CrossRefScorer(model)
    views = generate_rig("sphere", n_candidates + n_refs, 2.5, seed, CameraIntrinsics.square(side))
    rows = []
    for n in splat_counts:
        cloud = generate_scene(SceneSpec(seed=seed, n_splats=int(n)))
        refs = [render(cloud, v).rgb for v in views[n_candidates:]]
        render(cloud, views[0])  # warm-up (JIT, caches)
        scorer.score(refs[0], refs, 0)
        t_render, t_score = [], []
        for _ in range(repeats):
            for v in views[:n_candidates]:
                t0 = time.perf_counter()
                rgb = render(cloud, v).rgb
                t1 = time.perf_counter()
                scorer.score(rgb, refs, v.id)
                t2 = time.perf_counter()
                t_render.append(t1 - t0)
                t_score.append(t2 - t1)
        rows.append({"n_splats": int(n), "render_ms": 1e3 * float(np.median(t_render)),
                     "score_ms": 1e3 * float(np.median(t_score)),
                     "n_samples": len(t_render)})
    return rows


def score_time_spread(rows: list[dict]) -> float:
    """(max - min) / min of the per-candidate score time across rows."""
    s = [r["score_ms"] for r in rows]
    return (max(s) - min(s)) / min(s)
