import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest, norm

from limbpoints import (
    BodyPartMask,
    GenerationFailedError,
    Limb,
    LimbKeypointSpec,
    NoSectionError,
    PredictionSide,
    classify_prediction,
    cross_section,
    point_in_mask,
    project_point,
    rasterize_polygon,
    realize_keypoint,
    sample_keypoint,
)

from conftest import RasterScanOracle, circle_mask, random_capsule_mask, random_star_mask, rect_mask


# ---------------------------------------------------------------------------
# project_point


def test_project_endpoints_exact(rect):
    assert np.array_equal(project_point(rect, 0.0), rect.endpoint_a)
    assert np.array_equal(project_point(rect, 1.0), rect.endpoint_b)


def test_project_interpolates(rect):
    assert np.allclose(project_point(rect, 0.3), (3.0, 0.0))
    slanted = BodyPartMask(
        limb=Limb.LEFT_THIGH,
        endpoint_a=(2.0, 1.0),
        endpoint_b=(6.0, 9.0),
        polygon=np.array([[0, 0], [10, 0], [10, 10], [0, 10]], dtype=float),
    )
    assert np.allclose(project_point(slanted, 0.5), (4.0, 5.0))


@pytest.mark.parametrize("bad", [-0.1, 1.1, 2.0])
def test_project_rejects_out_of_range(rect, bad):
    with pytest.raises(ValueError):
        project_point(rect, bad)


# ---------------------------------------------------------------------------
# cross_section


def test_rectangle_cross_section_against_raster_oracle(rect):
    cs = cross_section(rect, 0.5)
    assert np.allclose(cs.projection, (5.0, 0.0))
    assert np.allclose(cs.side1, (5.0, 3.0))
    assert np.allclose(cs.side2, (5.0, -2.0))
    # 10x5 rectangle at 100 px per unit -> a 1000x500-ish bitmap
    oracle = RasterScanOracle(rect.polygon, scale=100.0)
    o1, o2 = oracle.cross_section(rect.endpoint_a, rect.endpoint_b, 0.5)
    assert np.linalg.norm(o1 - cs.side1) < 0.05
    assert np.linalg.norm(o2 - cs.side2) < 0.05


def test_circle_cross_section_analytic(circle):
    cs = cross_section(circle, 0.5)
    # analytic oracle: vertical chord of x^2 + y^2 = 16 through x = 0
    assert np.allclose(cs.side1, (0.0, 4.0), atol=1e-9)
    assert np.allclose(cs.side2, (0.0, -4.0), atol=1e-9)


def test_projection_outside_concave_mask_raises():
    # C-shape whose opening contains the middle of the bone
    c_shape = np.array(
        [[0, 0], [10, 0], [10, 2], [3, 2], [3, 8], [10, 8], [10, 10], [0, 10]],
        dtype=float,
    )
    mask = BodyPartMask(
        limb=Limb.LEFT_FOREARM,
        endpoint_a=(1.0, 1.0),
        endpoint_b=(1.0, 9.0),
        polygon=c_shape,
    )
    cross_section(mask, 0.0)  # endpoint region is fine
    hole = BodyPartMask(
        limb=Limb.LEFT_FOREARM,
        endpoint_a=(9.0, 1.0),
        endpoint_b=(9.0, 9.0),
        polygon=c_shape,
    )
    with pytest.raises(NoSectionError):
        cross_section(hole, 0.5)  # (9, 5) lies in the opening


def test_concave_mask_takes_nearest_crossing():
    # Dumbbell: the line through the narrow waist must hit the waist walls,
    # not the outer lobes.
    waist = np.array(
        [
            [0, 0], [8, 0], [8, 3], [12, 3], [12, 0], [20, 0],
            [20, 10], [12, 10], [12, 7], [8, 7], [8, 10], [0, 10],
        ],
        dtype=float,
    )
    mask = BodyPartMask(
        limb=Limb.RIGHT_THIGH, endpoint_a=(1.0, 5.0), endpoint_b=(19.0, 5.0), polygon=waist
    )
    cs = cross_section(mask, 0.5)  # projection (10, 5) inside the waist
    assert np.allclose(cs.side1, (10.0, 7.0))
    assert np.allclose(cs.side2, (10.0, 3.0))


def test_raster_cross_section_subpixel(rect):
    raster = rasterize_polygon(rect_mask_shifted(), scale=8.0)
    cs = cross_section(raster, 0.5)
    # shifted rectangle: y in [8, 48] at scale 8 -> boundaries 8 and 48
    assert abs(cs.side1[1] - 48.0) < 0.5
    assert abs(cs.side2[1] - 8.0) < 0.5


def rect_mask_shifted() -> BodyPartMask:
    return BodyPartMask(
        limb=Limb.LEFT_UPPER_ARM,
        endpoint_a=(1.0, 3.0),
        endpoint_b=(11.0, 3.0),
        polygon=np.array([[1, 1], [11, 1], [11, 6], [1, 6]], dtype=float),
    )


@pytest.mark.parametrize("seed", range(8))
def test_polygon_and_raster_cross_sections_agree(seed):
    rng = np.random.default_rng(seed)
    mask = random_capsule_mask(rng)
    scale = 4.0
    raster = rasterize_polygon(mask, scale=scale)
    for p_b in (0.15, 0.4, 0.6, 0.85):
        cs_p = cross_section(mask, p_b)
        cs_r = cross_section(raster, p_b)
        assert np.linalg.norm(cs_p.side1 * scale - cs_r.side1) <= scale
        assert np.linalg.norm(cs_p.side2 * scale - cs_r.side2) <= scale


def test_degenerate_cross_section_on_boundary():
    mask = BodyPartMask(
        limb=Limb.LEFT_UPPER_ARM,
        endpoint_a=(0.0, 3.0),  # exactly on the top edge
        endpoint_b=(10.0, 0.0),
        polygon=np.array([[0, -2], [10, -2], [10, 3], [0, 3]], dtype=float),
    )
    cs = cross_section(mask, 0.0)
    assert cs.is_degenerate
    with pytest.raises(ValueError):
        realize_keypoint(mask, LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.0, 0.5))


# ---------------------------------------------------------------------------
# realize_keypoint


def test_realize_zero_thickness_is_projection(rect):
    spec = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.37, 0.0)
    assert np.allclose(realize_keypoint(rect, spec), project_point(rect, 0.37))


def test_realize_full_thickness_hits_boundary(rect):
    spec = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, 1.0)
    assert np.allclose(realize_keypoint(rect, spec), (5.0, 3.0))


def test_realize_negative_half_thickness(rect):
    spec = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, -0.5)
    assert np.allclose(realize_keypoint(rect, spec), (5.0, -1.0))


def test_realize_rejects_wrong_limb(rect):
    with pytest.raises(ValueError):
        realize_keypoint(rect, LimbKeypointSpec(Limb.RIGHT_THIGH, 0.5, 0.0))


@given(
    seed=st.integers(0, 10_000),
    p_b=st.floats(0.02, 0.98),
    tau=st.floats(-1.0, 1.0),
)
@settings(max_examples=60, deadline=None)
def test_realized_point_inside_mask(seed, p_b, tau):
    rng = np.random.default_rng(seed)
    mask = random_capsule_mask(rng) if seed % 2 == 0 else random_star_mask(rng)
    spec = LimbKeypointSpec(mask.limb, p_b, tau)
    try:
        point = realize_keypoint(mask, spec)
    except NoSectionError:
        return  # concave masks may not cover this projection
    assert point_in_mask(mask, point) or _near_boundary(mask, point)


def _near_boundary(mask: BodyPartMask, q, tol: float = 1e-6) -> bool:
    poly = mask.polygon
    v0, v1 = poly, np.roll(poly, -1, axis=0)
    e = v1 - v0
    w = np.asarray(q)[None, :] - v0
    t = np.clip(np.einsum("ij,ij->i", w, e) / np.einsum("ij,ij->i", e, e), 0, 1)
    return np.min(np.linalg.norm(w - t[:, None] * e, axis=1)) < tol


@given(seed=st.integers(0, 10_000), p_b=st.floats(0.05, 0.95), tau=st.floats(0.05, 1.0))
@settings(max_examples=60, deadline=None)
def test_thickness_sign_flip_lands_on_opposite_sides(seed, p_b, tau):
    rng = np.random.default_rng(seed)
    mask = random_capsule_mask(rng)
    d = mask.bone()
    p1 = realize_keypoint(mask, LimbKeypointSpec(mask.limb, p_b, tau))
    p2 = realize_keypoint(mask, LimbKeypointSpec(mask.limb, p_b, -tau))
    bp = project_point(mask, p_b)
    s1 = d[0] * (p1[1] - bp[1]) - d[1] * (p1[0] - bp[0])
    s2 = d[0] * (p2[1] - bp[1]) - d[1] * (p2[0] - bp[0])
    assert s1 > 0.0 > s2


# ---------------------------------------------------------------------------
# sample_keypoint


def test_sampling_is_deterministic(rect):
    s1, p1 = sample_keypoint(rect, np.random.default_rng(123))
    s2, p2 = sample_keypoint(rect, np.random.default_rng(123))
    assert s1 == s2
    assert np.array_equal(p1, p2)


def test_sampling_rejects_bad_sigma(rect):
    with pytest.raises(ValueError):
        sample_keypoint(rect, np.random.default_rng(0), sigma=0.0)


def test_sampling_thickness_distribution(rect):
    # Fraction with zero thickness is P(|z| >= 1) = 2 * (1 - Phi(1)).
    rng = np.random.default_rng(2024)
    n = 100_000
    taus = np.empty(n)
    pbs = np.empty(n)
    for i in range(n):
        spec, _ = sample_keypoint(rect, rng, sigma=1.0)
        taus[i] = spec.signed_thickness
        pbs[i] = spec.line_fraction
    expected = 2.0 * (1.0 - norm.cdf(1.0))
    assert abs(np.mean(taus == 0.0) - expected) < 0.01
    assert kstest(pbs, "uniform").statistic < 0.01


def test_sampling_exhausts_retries_on_hopeless_mask():
    # Bone through the opening of a C-shape: most projections have no section.
    c_shape = np.array(
        [[0, 0], [10, 0], [10, 2], [3, 2], [3, 8], [10, 8], [10, 10], [0, 10]],
        dtype=float,
    )
    mask = BodyPartMask(
        limb=Limb.LEFT_FOREARM, endpoint_a=(9.0, 2.5), endpoint_b=(9.0, 7.5), polygon=c_shape
    )
    with pytest.raises(GenerationFailedError):
        # All projections along this bone fall in the opening.
        sample_keypoint(mask, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# classify_prediction


def test_classify_identity_prediction(rect):
    for tau in (0.0, 0.4, -0.7):
        spec = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.3, tau)
        point = realize_keypoint(rect, spec)
        cls = classify_prediction(rect, point, spec)
        assert cls.side is PredictionSide.SAME_SIDE
        assert cls.thickness_ratio == pytest.approx(abs(tau), abs=1e-9)


def test_classify_opposite_side(rect):
    gt = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, 0.5)
    cls = classify_prediction(rect, (5.0, -1.0), gt)
    assert cls.side is PredictionSide.OPPOSITE_SIDE
    assert cls.thickness_ratio == pytest.approx(0.5)


def test_classify_far_outside_is_unresolvable(rect):
    gt = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, 0.5)
    assert (
        classify_prediction(rect, (50.0, 50.0), gt).side is PredictionSide.UNRESOLVABLE
    )


def test_classify_projection_off_segment_is_unresolvable(rect):
    gt = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, 0.5)
    assert (
        classify_prediction(rect, (-1.0, 1.0), gt).side is PredictionSide.UNRESOLVABLE
    )


def test_classify_just_past_boundary_is_unresolvable(rect):
    gt = LimbKeypointSpec(Limb.LEFT_UPPER_ARM, 0.5, 0.5)
    cls = classify_prediction(rect, (5.0, 3.4), gt)  # above the top wall
    assert cls.side is PredictionSide.UNRESOLVABLE


def test_classify_uses_predictions_own_cross_section():
    # Trapezoid: thickness denominators differ along the bone.
    trap = BodyPartMask(
        limb=Limb.RIGHT_FOREARM,
        endpoint_a=(0.0, 0.0),
        endpoint_b=(10.0, 0.0),
        polygon=np.array([[0, -1], [10, -4], [10, 4], [0, 1]], dtype=float),
    )
    gt = LimbKeypointSpec(Limb.RIGHT_FOREARM, 0.2, 0.5)
    # prediction at x=8 where the half-width is 1 + 3 * 0.8 = 3.4
    cls = classify_prediction(trap, (8.0, 1.7), gt)
    assert cls.side is PredictionSide.SAME_SIDE
    assert cls.thickness_ratio == pytest.approx(0.5)


def test_classify_raster_matches_polygon():
    rng = np.random.default_rng(5)
    mask = random_capsule_mask(rng)
    raster = rasterize_polygon(mask, scale=4.0)
    gt = LimbKeypointSpec(mask.limb, 0.4, 0.6)
    point = realize_keypoint(mask, gt)
    cls_p = classify_prediction(mask, point, gt)
    cls_r = classify_prediction(raster, point * 4.0, gt)
    assert cls_p.side is cls_r.side is PredictionSide.SAME_SIDE
    assert cls_p.thickness_ratio == pytest.approx(cls_r.thickness_ratio, abs=0.05)


# ---------------------------------------------------------------------------
# mask validation


def test_mask_requires_exactly_one_shape():
    poly = np.array([[0, 0], [4, 0], [4, 4]], dtype=float)
    with pytest.raises(ValueError):
        BodyPartMask(limb=Limb.LEFT_THIGH, endpoint_a=(0, 0), endpoint_b=(1, 0))
    with pytest.raises(ValueError):
        BodyPartMask(
            limb=Limb.LEFT_THIGH,
            endpoint_a=(0, 0),
            endpoint_b=(1, 0),
            polygon=poly,
            bitmap=np.ones((4, 4), bool),
        )


def test_mask_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        BodyPartMask(
            limb=Limb.LEFT_THIGH,
            endpoint_a=(0, 0),
            endpoint_b=(0, 0),
            polygon=np.array([[0, 0], [4, 0], [4, 4]], dtype=float),
        )
    with pytest.raises(ValueError):
        BodyPartMask(
            limb=Limb.LEFT_THIGH,
            endpoint_a=(0, 0),
            endpoint_b=(1, 0),
            polygon=np.array([[0, 0], [4, 0], [8, 0]], dtype=float),  # zero area
        )
    with pytest.raises(ValueError):
        BodyPartMask(
            limb=Limb.LEFT_THIGH,
            endpoint_a=(0, 0),
            endpoint_b=(1, 0),
            bitmap=np.zeros((4, 4), bool),
        )


def test_spec_validates_ranges():
    with pytest.raises(ValueError):
        LimbKeypointSpec(Limb.LEFT_THIGH, -0.1, 0.0)
    with pytest.raises(ValueError):
        LimbKeypointSpec(Limb.LEFT_THIGH, 0.5, 1.5)
