import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avs.tensorimg import (FormatError, center_crop, container_size, fit_square, load_pfm,
                           load_ppm, load_tensors, quantize, resize, resize_long_side, save_pfm,
                           save_ppm, save_tensors, to_gray)


def test_ppm_constant_zero_and_one(tmp_path):
    for v in (0.0, 1.0):
        img = np.full((5, 7, 3), v)
        save_ppm(img, tmp_path / "a.ppm")
        raw = (tmp_path / "a.ppm").read_bytes()
        assert raw.startswith(b"P6\n7 5\n255\n")
        assert set(raw[len(b"P6\n7 5\n255\n"):]) == {int(v * 255)}
        assert np.array_equal(load_ppm(tmp_path / "a.ppm"), img)


def test_ppm_half_rounds_up(tmp_path):
    save_ppm(np.full((1, 1, 3), 0.5), tmp_path / "h.ppm")
    assert (tmp_path / "h.ppm").read_bytes()[-3:] == bytes([128] * 3)
    assert load_ppm(tmp_path / "h.ppm")[0, 0, 0] == pytest.approx(128 / 255)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 5, 3), elements=st.floats(0.0, 1.0)))
def test_ppm_roundtrip_error_half_step(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("ppm") / "r.ppm"
    save_ppm(img, p)
    assert np.max(np.abs(load_ppm(p) - img)) <= 1.0 / 510 + 1e-12


def test_ppm_errors_carry_offsets(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
    with pytest.raises(FormatError) as e:
        load_ppm(p)
    assert e.value.offset == 0
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError) as e:
        load_ppm(p)
    # the offset is where the payload runs out
    assert e.value.offset == len(b"P6\n2 2\n255\n") + 5
    with pytest.raises(ValueError):
        save_ppm(np.full((2, 2, 3), 1.5), p)
    with pytest.raises(ValueError):
        save_ppm(np.zeros((2, 2, 1)), p)


def test_quantize_formula():
    assert quantize(np.array([0.5 / 255, 1.5 / 255, 0.499 / 255])).tolist() == [1, 2, 0]


def test_tensors_empty_and_zero(tmp_path):
    save_tensors({}, tmp_path / "e.avst")
    assert load_tensors(tmp_path / "e.avst") == {}
    assert (tmp_path / "e.avst").stat().st_size == 12
    save_tensors({"z": np.zeros((2, 2))}, tmp_path / "z.avst")
    out = load_tensors(tmp_path / "z.avst")
    assert out["z"].dtype == np.float32 and out["z"].tobytes() == np.zeros((2, 2), np.float32).tobytes()


def test_tensors_roundtrip_100_random(tmp_path):
    rng = np.random.default_rng(7)
    tensors = {}
    for i in range(100):
        shape = tuple(rng.integers(1, 5, rng.integers(0, 4)))
        tensors[f"t{i}.w"] = rng.standard_normal(shape).astype(np.float32)
    p = tmp_path / "r.avst"
    save_tensors(tensors, p)
    back = load_tensors(p)
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()
    assert p.stat().st_size == container_size(tensors)


def test_container_size_counts_every_field(tmp_path):
    t = {"ab": np.zeros((3, 4), np.float32)}
    save_tensors(t, tmp_path / "s.avst")
    # header 12 + name_len 4 + name 2 + rank 4 + dims 8 + payload 48
    assert (tmp_path / "s.avst").stat().st_size == container_size(t) == 78


def test_tensors_errors(tmp_path):
    with pytest.raises(ValueError):
        save_tensors([("a", np.zeros(1)), ("a", np.zeros(1))], tmp_path / "d.avst")
    with pytest.raises(ValueError):
        save_tensors({"": np.zeros(1)}, tmp_path / "d.avst")
    p = tmp_path / "m.avst"
    p.write_bytes(b"XXXX" + struct.pack("<II", 1, 0))
    with pytest.raises(FormatError) as e:
        load_tensors(p)
    assert e.value.offset == 0
    p.write_bytes(b"AVST" + struct.pack("<II", 2, 0))
    with pytest.raises(FormatError) as e:
        load_tensors(p)
    assert e.value.offset == 4
    p.write_bytes(b"AVST" + struct.pack("<II", 1, 1) + struct.pack("<I", 3) + b"ab")
    with pytest.raises(FormatError):
        load_tensors(p)


def test_pfm_roundtrip_and_layout(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.random((4, 6, 1))
    save_pfm(m, tmp_path / "m.pfm")
    raw = (tmp_path / "m.pfm").read_bytes()
    assert raw.startswith(b"Pf\n6 4\n-1.0\n")
    first_row_on_disk = np.frombuffer(raw[len(b"Pf\n6 4\n-1.0\n"):][:24], "<f4")
    assert np.array_equal(first_row_on_disk, m[-1, :, 0].astype(np.float32))
    assert np.array_equal(load_pfm(tmp_path / "m.pfm"), m.astype(np.float32))


def test_resize_long_side_examples():
    img = np.full((518, 300, 3), 0.3)
    assert resize_long_side(img, 518).shape == (518, 300, 3)
    assert resize_long_side(np.zeros((1066, 1600, 3)), 518).shape == (345, 518, 3)
    out = resize_long_side(np.full((10, 20, 3), 0.7), 33)
    assert out.shape == (17, 33, 3)
    assert np.allclose(out, 0.7, atol=1e-15)
    assert resize_long_side(np.zeros((1, 100, 1)), 10).shape == (1, 10, 1)


def test_resize_idempotent_and_exact_on_identity(rng):
    img = rng.random((12, 9, 3))
    assert np.array_equal(resize_long_side(img, 12), img)
    assert np.array_equal(resize(img, 12, 9), img)


def test_center_crop_and_fit_square(rng):
    img = rng.random((10, 14, 3))
    assert np.array_equal(center_crop(img, 10), img[:, 2:12])
    assert fit_square(img, 8).shape == (8, 8, 3)
    with pytest.raises(ValueError):
        center_crop(img, 11)


def test_to_gray_examples():
    assert to_gray(np.ones((1, 1, 3)))[0, 0, 0] == pytest.approx(1.0)
    assert to_gray(np.array([[[1.0, 0.0, 0.0]]]))[0, 0, 0] == pytest.approx(0.299)
    with pytest.raises(ValueError):
        to_gray(np.ones((2, 2, 1)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4, 3), elements=st.floats(0.0, 1.0)))
def test_to_gray_convex(img):
    y = to_gray(img)[..., 0]
    assert np.all(y >= img.min(axis=2) - 1e-12)
    assert np.all(y <= img.max(axis=2) + 1e-12)
