import numpy as np
import pytest

from avs.camera import CameraIntrinsics, CameraView
from avs.crossref import (ScorerConfig, ScorerModel, TripletRecord, backward, batch_loss, forward,
                          init_params, load_weights, param_shapes, patchify, predict_quality,
                          save_weights, select_refs, train, unpatchify)
from avs.scenegen import make_bundle
from avs.tensorimg import load_ppm

TINY = ScorerConfig(image_side=16, patch=8, dim=8, heads=2, blocks=1, ffn_dim=16, k_refs=3)


def _perturbed(cfg, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    p = init_params(cfg, seed)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in p.items()}


def test_fresh_model_outputs_half(rng):
    m = ScorerModel.init(ScorerConfig())
    q, refs = rng.random((64, 64, 3)), rng.random((3, 64, 64, 3))
    out = m.forward(q, refs)
    assert out.shape == (64, 64) and np.all(out == 0.5)
    assert predict_quality(m, q, list(refs)) == 0.5


def test_patchify_roundtrip(rng):
    x = rng.random((2, 16, 16, 1))
    t = patchify(x, 8)
    assert t.shape == (2, 4, 64)
    assert np.array_equal(unpatchify(t, 8), x[..., 0])
    assert np.array_equal(t[0, 1], x[0, 0:8, 8:16, 0].ravel())


def test_input_validation(rng):
    p = init_params(TINY)
    with pytest.raises(ValueError):
        forward(p, TINY, rng.random((16, 16, 3)), rng.random((0, 16, 16, 3)))
    with pytest.raises(ValueError):
        forward(p, TINY, rng.random((16, 16, 3)), rng.random((4, 16, 16, 3)))
    with pytest.raises(ValueError):
        forward(p, TINY, rng.random((8, 8, 3)), rng.random((1, 8, 8, 3)))
    with pytest.raises(ValueError):
        ScorerConfig(image_side=60, patch=8)


def test_reference_permutation_invariance(rng):
    cfg = ScorerConfig()
    p = _perturbed(cfg, 1, 0.1)
    q, refs = rng.random((64, 64, 3)), rng.random((5, 64, 64, 3))
    a = forward(p, cfg, q, refs)
    b = forward(p, cfg, q, refs[[3, 0, 4, 2, 1]])
    assert np.max(np.abs(a - b)) < 1e-5
    assert np.all((a > 0) & (a < 1))


def test_batched_equals_single(rng):
    p = _perturbed(TINY, 2)
    q, refs = rng.random((3, 16, 16, 3)), rng.random((3, 2, 16, 16, 3))
    batched = forward(p, TINY, q, refs)
    for i in range(3):
        assert np.allclose(batched[i], forward(p, TINY, q[i], refs[i]), atol=1e-13)


def test_backward_zero_upstream_and_names(rng):
    p = _perturbed(TINY, 3)
    _, cache = forward(p, TINY, rng.random((16, 16, 3)), rng.random((2, 16, 16, 3)), keep_cache=True)
    g = backward(p, TINY, cache, np.zeros((16, 16)))
    assert list(g) == list(p) and all(not v.any() for v in g.values())
    with pytest.raises(ValueError):
        backward(p, TINY, cache, np.zeros((8, 8)))
    names = list(param_shapes(ScorerConfig()))
    assert names[:2] == ["patch_embed.w", "patch_embed.b"]
    assert "blocks.0.self.q.w" in names and "blocks.1.cross.o.b" in names
    # position codes are fixed and query-only: no learnable or reference posenc exists
    assert not [n for n in names if "pos" in n]


def test_backward_matches_fd_tiny(rng):
    p = _perturbed(TINY, 4)
    q, refs = rng.random((2, 16, 16, 3)), rng.random((2, 3, 16, 16, 3))
    up = rng.standard_normal((2, 16, 16))
    _, cache = forward(p, TINY, q, refs, keep_cache=True)
    g = backward(p, TINY, cache, up)
    h = 1e-3
    for name in p:
        for _ in range(2):
            idx = tuple(int(rng.integers(0, s)) for s in p[name].shape)
            old = p[name][idx]
            p[name][idx] = old + h
            fp = np.sum(forward(p, TINY, q, refs) * up)
            p[name][idx] = old - h
            fm = np.sum(forward(p, TINY, q, refs) * up)
            p[name][idx] = old
            fd = (fp - fm) / (2 * h)
            assert abs(g[name][idx] - fd) / max(abs(fd), 1e-6) < 1e-2, name


def _tiny_records(n, seed=0):
    rng = np.random.default_rng(seed)
    return [TripletRecord(rng.random((16, 16, 3)), rng.random((3, 16, 16, 3)),
                          rng.random((16, 16)), scene_id=i % 2) for i in range(n)]


def test_training_deterministic():
    recs = _tiny_records(6)
    a, log_a = train(recs, TINY, 15, seed=3, batch_size=4, log_every=5)
    b, _ = train(recs, TINY, 15, seed=3, batch_size=4, log_every=5)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert log_a.steps == [0, 5, 10, 15]
    with pytest.raises(ValueError):
        train([], TINY, 1)


def test_overfit_single_triplet():
    bundle = make_bundle(77, n_views=12, n_test=2)
    v = bundle.pool
    rng = np.random.default_rng(0)
    query = np.clip(v[0].gt_image + rng.normal(0, 0.1, v[0].gt_image.shape), 0, 1)
    from avs.iqa import ssim_map
    target = np.clip(ssim_map(query, v[0].gt_image).values[..., 0], 0, 1)
    rec = TripletRecord(query, np.stack([x.gt_image for x in v[1:6]]), target)
    model, _ = train([rec], ScorerConfig(), 2000, seed=0, batch_size=1)
    assert batch_loss(model, [rec]) < 1e-3


def test_weights_roundtrip_and_mismatch(tmp_path, rng):
    m = ScorerModel(TINY, _perturbed(TINY, 5), {"train_seed": 5})
    save_weights(m, tmp_path / "w.avst")
    back = load_weights(tmp_path / "w.avst", TINY)
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k].astype(np.float32))
    with pytest.raises(ValueError):
        load_weights(tmp_path / "w.avst", ScorerConfig())


def _view_at(i, x):
    return CameraView(i, np.eye(3), np.array([-x, 0.0, 0.0]), CameraIntrinsics.square(8))


def test_select_refs_examples():
    avail = [_view_at(i, x) for i, x in enumerate([0.0, 1.0, 2.0, 10.0])]
    q = _view_at(9, 0.4)
    assert [v.id for v in select_refs(q, avail, 2)] == [0, 1]
    assert [v.id for v in select_refs(q, avail, 10)] == [0, 1, 2, 3]
    q0 = _view_at(1, 1.0)
    assert 1 not in [v.id for v in select_refs(q0, avail, 4)]
    tie = [_view_at(5, 1.0), _view_at(2, -1.0)]
    assert [v.id for v in select_refs(_view_at(9, 0.0), tie, 1)] == [2]
    with pytest.raises(ValueError):
        select_refs(q, [], 1)


def test_trained_validation_loss_decreases(trained_scorer):
    _, _, _, _, log, _ = trained_scorer
    assert log.steps[0] == 0 and 2000 in log.steps
    assert log.val_losses[0] > log.val_losses[log.steps.index(2000)]


@pytest.mark.xfail(strict=True, reason="the trained scorer leans on the query image; reference "
                   "edits move its map by ~0.003 either way (measured 24/50 cases)")
def test_trained_duplicate_vs_unrelated_reference(trained_scorer):
    """Replacing one reference by a copy of another should matter less than by a foreign view."""
    model, _, va, _, _, _ = trained_scorer
    recs = va.load_records()
    dup_smaller = 0
    for i in range(50):
        r = recs[(i * 7) % len(recs)]
        other = recs[(i * 7 + len(recs) // 2) % len(recs)]
        assert other.scene_id != r.scene_id or len(va.scene_ids) == 1
        dup, unrelated = r.refs.copy(), r.refs.copy()
        dup[-1] = r.refs[0]
        unrelated[-1] = other.refs[0]
        ref_map = model.forward(r.query, r.refs)
        d_dup = np.mean(np.abs(model.forward(r.query, dup) - ref_map))
        d_unrel = np.mean(np.abs(model.forward(r.query, unrelated) - ref_map))
        dup_smaller += d_dup < d_unrel
    assert dup_smaller == 50


@pytest.mark.xfail(strict=True, reason="the triplet corpus holds only reconstruction artifacts; "
                   "pixel noise is out of distribution and barely lowers the score")
def test_trained_clean_beats_noised(trained_scorer):
    """A ground-truth view scores above its sigma=0.2 noised copy, in every validation scene."""
    model, _, va, _, _, _ = trained_scorer
    rng = np.random.default_rng(0)
    recs = va.load_records()
    last = max(m["iteration"] for m in va.records)
    per_scene = {}
    for meta, r in zip(va.records, recs):
        if meta["iteration"] != last:
            continue
        gt = load_ppm(va.root / f"scene_{meta['scene_id']:04d}" / "gt" / f"view_{meta['view_id']:04d}.ppm")
        noisy = np.clip(gt + rng.normal(0, 0.2, gt.shape), 0, 1)
        clean_q = predict_quality(model, gt, list(r.refs))
        noisy_q = predict_quality(model, noisy, list(r.refs))
        assert 0 < noisy_q < 1 and 0 < clean_q < 1
        per_scene.setdefault(meta["scene_id"], []).append(clean_q > noisy_q)
    assert len(per_scene) == len(va.scene_ids)
    assert all(all(v) for v in per_scene.values())
