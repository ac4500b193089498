import math

import numpy as np
import pytest

from limbpoints import (
    Heatmap,
    decode_argmax,
    decode_dark,
    heatmap_from_bytes,
    heatmap_to_bytes,
    render_gaussian,
)


def cell_center(r, c, stride=4.0):
    return np.array([(c + 0.5) * stride, (r + 0.5) * stride])


# ---------------------------------------------------------------------------
# rendering


def test_render_peak_at_cell_center():
    target = cell_center(20, 17)
    hm = render_gaussian(target, (64, 48), 2.0, 4.0)
    r, c = np.unravel_index(np.argmax(hm.values), hm.values.shape)
    assert (r, c) == (20, 17)
    assert hm.values[r, c] == pytest.approx(1.0)


def test_render_mass_matches_gaussian_integral():
    # discrete-sum oracle: sum over an essentially infinite grid
    sigma = 2.0
    xs = np.arange(-60, 61)
    oracle = np.exp(-(xs[:, None] ** 2 + xs[None, :] ** 2) / (2 * sigma**2)).sum()
    hm = render_gaussian(cell_center(32, 24), (64, 48), sigma, 4.0)
    assert hm.values.sum() == pytest.approx(oracle, rel=1e-6)
    assert hm.values.sum() == pytest.approx(2.0 * math.pi * sigma**2, rel=0.01)


def test_render_is_deterministic():
    a = render_gaussian((100.3, 57.9), (64, 48), 2.0, 4.0)
    b = render_gaussian((100.3, 57.9), (64, 48), 2.0, 4.0)
    assert np.array_equal(a.values, b.values)


def test_render_out_of_bounds_flags_zero_map():
    hm = render_gaussian((-5.0, 10.0), (64, 48), 2.0, 4.0)
    assert hm.out_of_bounds
    assert not hm.values.any()
    hm = render_gaussian((500.0, 10.0), (64, 48), 2.0, 4.0)
    assert hm.out_of_bounds


def test_render_rejects_bad_sigma():
    with pytest.raises(ValueError):
        render_gaussian((10, 10), (64, 48), 0.0, 4.0)


# ---------------------------------------------------------------------------
# argmax decoding


def test_argmax_recovers_cell_centers():
    target = cell_center(11, 30)
    hm = render_gaussian(target, (64, 48), 2.0, 4.0)
    out = decode_argmax(hm)
    assert np.allclose(out.point, target)
    assert out.score == pytest.approx(1.0)
    assert not out.low_confidence


def test_argmax_quantization_bound():
    # target at a cell corner: error up to stride / sqrt(2)
    stride = 4.0
    target = np.array([17 * stride, 11 * stride])  # corner of four cells
    hm = render_gaussian(target, (64, 48), 2.0, stride)
    out = decode_argmax(hm)
    err = np.linalg.norm(out.point - target)
    assert err <= stride / math.sqrt(2.0) + 1e-9


def test_argmax_uniform_map_is_flagged():
    hm = Heatmap(np.full((8, 8), 0.5), 4.0)
    out = decode_argmax(hm)
    assert out.low_confidence
    assert np.allclose(out.point, cell_center(0, 0))


def test_argmax_tie_breaks_to_smallest_row_col():
    values = np.zeros((8, 8))
    values[3, 5] = values[5, 2] = 1.0
    out = decode_argmax(Heatmap(values, 4.0))
    assert np.allclose(out.point, cell_center(3, 5))


# ---------------------------------------------------------------------------
# distribution-aware decoding


def test_dark_recovers_subpixel_targets():
    rng = np.random.default_rng(0)
    for _ in range(50):
        target = rng.uniform((40, 40), (150, 215))
        hm = render_gaussian(target, (64, 48), 2.0, 4.0)
        out = decode_dark(hm)
        assert not out.fallback
        # within 0.05 heatmap cells = 0.2 input px
        assert np.linalg.norm(out.point - target) < 0.2


def test_dark_on_symmetric_map_equals_argmax():
    target = cell_center(30, 20)
    hm = render_gaussian(target, (64, 48), 2.0, 4.0)
    assert np.allclose(decode_dark(hm).point, decode_argmax(hm).point, atol=1e-9)


def test_dark_beats_argmax_on_random_targets():
    rng = np.random.default_rng(7)
    wins = 0
    n = 1000
    for _ in range(n):
        target = rng.uniform((30, 30), (162, 226))
        hm = render_gaussian(target, (64, 48), 2.0, 4.0)
        e_dark = np.linalg.norm(decode_dark(hm).point - target)
        e_arg = np.linalg.norm(decode_argmax(hm).point - target)
        wins += e_dark < e_arg
    assert wins / n >= 0.99


def test_dark_falls_back_on_border_argmax():
    hm = render_gaussian((2.0, 2.0), (64, 48), 2.0, 4.0)  # peak in cell (0, 0)
    out = decode_dark(hm)
    assert out.fallback


def test_dark_falls_back_on_flat_map():
    out = decode_dark(Heatmap(np.full((8, 8), 0.3), 4.0))
    assert out.fallback


def test_dark_stays_within_half_cell_of_argmax():
    rng = np.random.default_rng(3)
    for _ in range(200):
        values = rng.uniform(0, 1, (12, 10))
        hm = Heatmap(values, 4.0)
        arg = decode_argmax(hm).point
        dark = decode_dark(hm).point
        assert np.all(np.abs(dark - arg) <= 2.0 + 1e-9)  # 0.5 cells * stride 4


def test_translation_equivariance_one_cell():
    base = np.array([70.3, 90.7])
    stride = 4.0
    hm0 = render_gaussian(base, (64, 48), 2.0, stride)
    hm1 = render_gaussian(base + [stride, 0.0], (64, 48), 2.0, stride)
    for decoder in (decode_argmax, decode_dark):
        p0 = decoder(hm0).point
        p1 = decoder(hm1).point
        assert np.allclose(p1 - p0, [stride, 0.0], atol=1e-6)


def test_render_decode_composition_bound():
    rng = np.random.default_rng(11)
    errs = []
    for _ in range(300):
        target = rng.uniform((30, 30), (162, 226))
        hm = render_gaussian(target, (64, 48), 2.0, 4.0)
        errs.append(np.linalg.norm(decode_dark(hm).point - target))
    assert max(errs) <= 0.25


# ---------------------------------------------------------------------------
# serialization


def test_heatmap_binary_round_trip():
    hm = render_gaussian((100.2, 57.3), (64, 48), 2.0, 4.0)
    blob = heatmap_to_bytes(hm)
    back = heatmap_from_bytes(blob)
    assert back.shape == hm.shape
    assert back.stride == hm.stride
    assert back.out_of_bounds == hm.out_of_bounds
    assert np.allclose(back.values, hm.values, atol=1e-6)  # float32 payload


def test_heatmap_bytes_reject_garbage():
    with pytest.raises(ValueError):
        heatmap_from_bytes(b"NOPE" + bytes(64))


def test_heatmap_validates_minimum_size():
    with pytest.raises(ValueError):
        Heatmap(np.zeros((4, 4)), 4.0)
