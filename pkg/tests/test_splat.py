import numpy as np
import pytest
from helpers import random_cloud, random_view, rel_error, renderer_fd_samples
from hypothesis import given, settings
from hypothesis import strategies as st

from avs.camera import CameraIntrinsics, CameraView
from avs.splat import (GaussianCloud, load_cloud, project, render, render_backward,
                       save_cloud, sigmoid)
from avs.splat.cloud import logit

IDENTITY = np.eye(3)


def cam(side=128, f=100.0, c=64.0):
    return CameraView(0, IDENTITY, np.zeros(3), CameraIntrinsics(f, f, c, c, side, side, near=0.1))


def single(pos, log_s, color, opacity):
    return GaussianCloud(np.array([pos], float), np.array([log_s], float),
                         logit(np.array([color], float)), logit(np.array([opacity], float)))


def test_project_examples():
    v = cam()
    u, vv, z, s = project([0, 0, 2.0], v, log_scale=0.3)
    assert (u, vv, z) == (64.0, 64.0, 2.0)
    assert s == pytest.approx(50 * np.exp(0.3))
    assert project([0.2, 0, 2.0], v)[0] == pytest.approx(74.0)
    assert project([0, 0, 0.05], v) is None


def test_empty_cloud_renders_background():
    out = render(GaussianCloud.empty(), cam(16, 10, 8), background=(0.1, 0.2, 0.3))
    assert np.allclose(out.rgb, [0.1, 0.2, 0.3]) and not out.alpha.any() and not out.depth.any()


def test_single_splat_center_pixel():
    c = single([0, 0, 2.0], np.log(0.05), [0.2, 0.6, 0.9], 0.7)
    out = render(c, cam(), background=(0, 0, 0))
    assert np.allclose(out.rgb[64, 64], 0.7 * np.array([0.2, 0.6, 0.9]), atol=1e-12)
    assert out.depth[64, 64, 0] == pytest.approx(2.0)


def test_two_coincident_splats():
    c = GaussianCloud(np.array([[0, 0, 2.0], [0, 0, 2.0 + 1e-9]]), np.log([0.05, 0.05]),
                      logit(np.array([[1 - 1e-12, 1e-12, 1e-12], [1e-12, 1 - 1e-12, 1e-12]])),
                      logit(np.array([0.5, 0.5])))
    out = render(c, cam(), background=(0, 0, 0))
    assert np.allclose(out.rgb[64, 64], [0.5, 0.25, 0.0], atol=1e-9)


def test_weight_clamp_and_cutoff():
    c = single([0, 0, 2.0], np.log(0.02), [0.5, 0.5, 0.5], 1 - 1e-9)  # sigma2d = 1 px
    out = render(c, cam(), background=(0, 0, 0))
    assert out.alpha[64, 64, 0] == pytest.approx(0.999)
    assert out.alpha[64, 67, 0] > 0           # d = 3 sigma is inside
    assert out.alpha[64, 68, 0] == 0.0        # d = 4 sigma is cut off
    assert out.alpha[66, 67, 0] == 0.0        # d = sqrt(13) > 3 sigma


def test_conservation_and_ranges(rng):
    for _ in range(5):
        c = random_cloud(rng, 40)
        v = random_view(rng, 24)
        out = render(c, v)
        trans = 1.0 - out.alpha
        assert np.all(out.alpha >= 0) and np.all(out.alpha <= 1)
        assert np.all(out.rgb >= 0) and np.all(out.rgb <= 1)
        assert np.all(out.depth >= 0)
        assert np.array_equal(out.alpha + trans, np.ones_like(trans))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_adding_a_splat_never_lowers_alpha(seed):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, 10)
    v = random_view(rng, 20)
    extra = random_cloud(rng, 1)
    before = render(c, v).alpha
    after = render(c.concat(extra), v).alpha
    assert np.all(after >= before - 1e-15)


def test_render_deterministic(rng):
    c = random_cloud(rng, 60)
    v = random_view(rng, 32)
    a, b = render(c, v), render(c.copy(), v)
    assert a.rgb.tobytes() == b.rgb.tobytes() and a.depth.tobytes() == b.depth.tobytes()


def test_depth_ties_break_by_index():
    pos = np.array([[0, 0, 2.0], [0, 0, 2.0]])
    col = logit(np.array([[0.9, 0.1, 0.1], [0.1, 0.9, 0.1]]))
    c = GaussianCloud(pos, np.log([0.05, 0.05]), col, logit(np.array([0.6, 0.6])))
    out = render(c, cam(), background=(0, 0, 0))
    assert out.rgb[64, 64, 0] > out.rgb[64, 64, 1]  # splat 0 composited first


def test_backward_zero_upstream(rng):
    c = random_cloud(rng, 16)
    v = random_view(rng, 24)
    g = render_backward(c, v, np.zeros((24, 24, 3)))
    assert all(not a.any() for a in g.params().values())
    with pytest.raises(ValueError):
        render_backward(c, v, np.zeros((5, 5, 3)))


def test_color_gradient_single_splat_by_hand():
    c = single([0, 0, 2.0], np.log(0.05), [0.3, 0.4, 0.5], 0.6)
    v = cam(32, 20, 16)
    up = np.random.default_rng(0).normal(size=(32, 32, 3))
    g = render_backward(c, v, up)
    out = render(c, v)
    # the single splat's weight is w = alpha (T = 1 before it)
    col = sigmoid(c.color_logits[0])
    expect = np.sum(up * out.alpha, axis=(0, 1)) * col * (1 - col)
    assert np.allclose(g.color_logits[0], expect, rtol=1e-12, atol=1e-14)


def test_culled_splats_get_zero_gradient():
    c = GaussianCloud(np.array([[0, 0, 2.0], [0, 0, -1.0]]), np.log([0.05, 0.05]),
                      np.zeros((2, 3)), np.zeros(2))
    g = render_backward(c, cam(32, 20, 16), np.ones((32, 32, 3)))
    assert not g.positions[1].any() and g.opacity_logits[1] == 0 and not g.color_logits[1].any()


def test_backward_matches_fd_16_splats():
    errs = [rel_error(a, fd) for _, _, a, fd in renderer_fd_samples(101, 48)]
    assert max(errs) < 1e-3


def test_cloud_io_and_validation(tmp_path, rng):
    c = random_cloud(rng, 9)
    save_cloud(c, tmp_path / "c.avst")
    back = load_cloud(tmp_path / "c.avst")
    assert np.array_equal(back.positions, c.positions.astype(np.float32))
    with pytest.raises(ValueError):
        GaussianCloud(np.zeros((2, 3)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        GaussianCloud(np.full((1, 3), np.nan), np.zeros(1), np.zeros((1, 3)), np.zeros(1))
