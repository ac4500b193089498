"""Limb-mask geometry.

A limb is described by a segmentation mask (polygon or raster bitmap) plus the
two fixed skeleton keypoints that enclose it. Everything here is built on two
primitives: projecting a fraction along the bone line, and intersecting the
orthogonal line through that projection with the mask boundary. On top of
those sit ground-truth keypoint generation and side/thickness classification
of model predictions.

Side convention: side 1 is where cross(endpoint_b - endpoint_a, c - b_p) > 0.
Positive signed thickness points to side 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Limb",
    "BodyPartMask",
    "LimbKeypointSpec",
    "CrossSection",
    "PredictionSide",
    "PredictionClassification",
    "NoSectionError",
    "GenerationFailedError",
    "project_point",
    "cross_section",
    "realize_keypoint",
    "sample_keypoint",
    "classify_prediction",
    "point_in_mask",
    "rasterize_polygon",
]

# Absolute tolerance for "exactly on the boundary" / "on the bone line" tests,
# in pixels. Mask coordinates are image pixels, so this is far below any
# meaningful geometric scale but far above float64 noise.
_BOUNDARY_EPS = 1e-9

# Raster boundary localization: coarse march step and bisection target width.
_MARCH_STEP = 0.25
_BISECT_WIDTH = 1.0 / 64.0

_SAMPLE_RETRIES = 16


class NoSectionError(Exception):
    """The orthogonal cross-section line does not intersect the mask as required."""


class GenerationFailedError(Exception):
    """Random keypoint generation exhausted its retry budget."""


class Limb(str, Enum):
    LEFT_UPPER_ARM = "left_upper_arm"
    RIGHT_UPPER_ARM = "right_upper_arm"
    LEFT_FOREARM = "left_forearm"
    RIGHT_FOREARM = "right_forearm"
    LEFT_THIGH = "left_thigh"
    RIGHT_THIGH = "right_thigh"
    LEFT_LOWER_LEG = "left_lower_leg"
    RIGHT_LOWER_LEG = "right_lower_leg"


def _as_point(p) -> np.ndarray:
    q = np.asarray(p, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"point has non-finite components: {p!r}")
    return q


def _polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class BodyPartMask:
    """A limb region with its two enclosing fixed keypoints.

    Exactly one of `polygon` (ordered (V, 2) vertex array, simple,
    non-self-intersecting) and `bitmap` (row-major (H, W) boolean array,
    pixel (r, c) covering [c, c+1) x [r, r+1)) must be given.
    """

    limb: Limb
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    polygon: np.ndarray | None = None
    bitmap: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", _as_point(self.endpoint_a))
        object.__setattr__(self, "endpoint_b", _as_point(self.endpoint_b))
        if np.allclose(self.endpoint_a, self.endpoint_b):
            raise ValueError("mask endpoints must be distinct")
        if (self.polygon is None) == (self.bitmap is None):
            raise ValueError("exactly one of polygon or bitmap is required")
        if self.polygon is not None:
            poly = np.asarray(self.polygon, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
                raise ValueError("polygon must be an (V >= 3, 2) vertex array")
            if not np.all(np.isfinite(poly)):
                raise ValueError("polygon vertices must be finite")
            if abs(_polygon_area(poly)) <= 0.0:
                raise ValueError("polygon must enclose a nonzero area")
            object.__setattr__(self, "polygon", poly)
            # Edge arrays are reused by every geometric query on this mask.
            e = np.roll(poly, -1, axis=0) - poly
            object.__setattr__(self, "_edges", e)
            object.__setattr__(self, "_edge_len2", np.einsum("ij,ij->i", e, e))
        else:
            bmp = np.asarray(self.bitmap).astype(bool)
            if bmp.ndim != 2:
                raise ValueError("bitmap must be a 2-D array")
            if not bmp.any():
                raise ValueError("bitmap must contain at least one set pixel")
            object.__setattr__(self, "bitmap", bmp)

    @property
    def is_polygon(self) -> bool:
        return self.polygon is not None

    def bone(self) -> np.ndarray:
        return self.endpoint_b - self.endpoint_a


@dataclass(frozen=True)
class LimbKeypointSpec:
    """Canonical parameterization of a limb point.

    `line_fraction` is the position along the bone from endpoint_a (0) to
    endpoint_b (1); `signed_thickness` in [-1, 1] moves toward the boundary
    crossing on side 1 (positive) or side 2 (negative). A fixed keypoint is
    (0, 0) on a limb whose endpoint_a is that keypoint.
    """

    limb: Limb
    line_fraction: float
    signed_thickness: float

    def __post_init__(self):
        if not (0.0 <= self.line_fraction <= 1.0):
            raise ValueError(f"line_fraction must be in [0, 1], got {self.line_fraction}")
        if not (-1.0 <= self.signed_thickness <= 1.0):
            raise ValueError(
                f"signed_thickness must be in [-1, 1], got {self.signed_thickness}"
            )

    @property
    def thickness(self) -> float:
        """Unsigned thickness magnitude."""
        return abs(self.signed_thickness)


@dataclass(frozen=True)
class CrossSection:
    """Boundary crossings of the orthogonal line through a projection point.

    `side1` is the nearest crossing on the positive side of the directed bone
    line, `side2` on the negative side. A degenerate section (projection
    exactly on the boundary) has side1 == side2 == projection.
    """

    projection: np.ndarray
    side1: np.ndarray
    side2: np.ndarray

    @property
    def half_width_1(self) -> float:
        return float(np.linalg.norm(self.side1 - self.projection))

    @property
    def half_width_2(self) -> float:
        return float(np.linalg.norm(self.side2 - self.projection))

    @property
    def is_degenerate(self) -> bool:
        return self.half_width_1 <= _BOUNDARY_EPS and self.half_width_2 <= _BOUNDARY_EPS


class PredictionSide(Enum):
    SAME_SIDE = "same_side"
    OPPOSITE_SIDE = "opposite_side"
    UNRESOLVABLE = "unresolvable"


@dataclass(frozen=True)
class PredictionClassification:
    """Side of a predicted point relative to the ground truth, plus its
    normalized thickness ratio (None when unresolvable)."""

    side: PredictionSide
    thickness_ratio: float | None


def _unit_normal(bone: np.ndarray) -> np.ndarray:
    # Rotate the bone by +90 degrees; cross(bone, normal) = |bone|^2 > 0,
    # so +normal is side 1.
    n = np.array([-bone[1], bone[0]])
    return n / np.linalg.norm(n)


def project_point(mask: BodyPartMask, p_b: float) -> np.ndarray:
    """Point at fraction `p_b` along the bone from endpoint_a to endpoint_b."""
    if not (0.0 <= p_b <= 1.0):
        raise ValueError(f"line fraction must be in [0, 1], got {p_b}")
    return p_b * mask.endpoint_b + (1.0 - p_b) * mask.endpoint_a


# ---------------------------------------------------------------------------
# polygon internals


def _mask_edges(mask: BodyPartMask) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return mask.polygon, mask._edges, mask._edge_len2  # type: ignore[attr-defined]


def _polygon_line_crossings(
    mask: BodyPartMask, origin: np.ndarray, direction: np.ndarray
) -> np.ndarray:
    """Signed parameters t of all boundary crossings of origin + t*direction.

    Each edge is half-open at its end vertex so shared vertices count once.
    Edges parallel to the line are skipped.
    """
    v0, e, _ = _mask_edges(mask)
    # cross(direction, e) per edge
    denom = direction[0] * e[:, 1] - direction[1] * e[:, 0]
    w = v0 - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * direction[1] - w[:, 1] * direction[0]) / denom
    scale = np.abs(e).max() if len(e) else 1.0
    valid = (np.abs(denom) > 1e-12 * max(scale, 1.0)) & (u >= 0.0) & (u < 1.0)
    return t[valid]


def _point_in_polygon_interior(mask: BodyPartMask, q: np.ndarray) -> bool:
    """Even-odd rule; boundary points are resolved arbitrarily."""
    x, y = q
    v0, e, _ = _mask_edges(mask)
    y0 = v0[:, 1]
    y1 = y0 + e[:, 1]
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = v0[:, 0] + (y - y0) / e[:, 1] * e[:, 0]
    return bool(np.count_nonzero(cond & (xs > x)) % 2)


def _point_in_polygon(mask: BodyPartMask, q: np.ndarray) -> bool:
    """Even-odd rule, with points on the boundary counted inside."""
    if _distance_to_polygon_boundary(mask, q) <= _BOUNDARY_EPS:
        return True
    return _point_in_polygon_interior(mask, q)


def _distance_to_polygon_boundary(mask: BodyPartMask, q: np.ndarray) -> float:
    v0, e, ee = _mask_edges(mask)
    w = q - v0
    t = np.einsum("ij,ij->i", w, e) / np.maximum(ee, 1e-300)
    np.clip(t, 0.0, 1.0, out=t)
    dx = w[:, 0] - t * e[:, 0]
    dy = w[:, 1] - t * e[:, 1]
    return float(np.sqrt(np.min(dx * dx + dy * dy)))


# ---------------------------------------------------------------------------
# raster internals


def _raster_inside(bitmap: np.ndarray, q: np.ndarray) -> bool:
    c = math.floor(q[0])
    r = math.floor(q[1])
    h, w = bitmap.shape
    return 0 <= r < h and 0 <= c < w and bool(bitmap[r, c])


def _raster_boundary_along(
    bitmap: np.ndarray, origin: np.ndarray, direction: np.ndarray
) -> float:
    """Distance along `direction` (unit) from `origin` to the mask boundary.

    Marches outward in coarse steps until the inside test flips, then bisects
    the bracket down to sub-pixel width. `origin` must be inside.
    """
    h, w = bitmap.shape
    t_max = math.hypot(h, w) + 1.0
    t_prev = 0.0
    t = _MARCH_STEP
    while t <= t_max:
        if not _raster_inside(bitmap, origin + t * direction):
            lo, hi = t_prev, t
            while hi - lo > _BISECT_WIDTH:
                mid = 0.5 * (lo + hi)
                if _raster_inside(bitmap, origin + mid * direction):
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        t_prev = t
        t += _MARCH_STEP
    raise NoSectionError("no boundary found along cross-section direction")


# ---------------------------------------------------------------------------
# public operations


def cross_section(mask: BodyPartMask, p_b: float) -> CrossSection:
    """Nearest boundary crossings on both sides of the projection at `p_b`.

    The cross-section line runs through the projection point orthogonal to
    the bone. Raises NoSectionError when the projection lies outside the mask
    or a side has no crossing.
    """
    b_p = project_point(mask, p_b)
    n = _unit_normal(mask.bone())
    if mask.is_polygon:
        if _distance_to_polygon_boundary(mask, b_p) <= _BOUNDARY_EPS:
            return CrossSection(b_p, b_p.copy(), b_p.copy())
        if not _point_in_polygon_interior(mask, b_p):
            raise NoSectionError(f"projection {b_p} lies outside the mask")
        ts = _polygon_line_crossings(mask, b_p, n)
        pos = ts[ts > _BOUNDARY_EPS]
        neg = ts[ts < -_BOUNDARY_EPS]
        if len(pos) == 0 or len(neg) == 0:
            raise NoSectionError("cross-section line does not exit the mask on both sides")
        t1 = float(pos.min())
        t2 = float(neg.max())
        return CrossSection(b_p, b_p + t1 * n, b_p + t2 * n)
    bitmap = mask.bitmap
    if not _raster_inside(bitmap, b_p):
        raise NoSectionError(f"projection {b_p} lies outside the mask")
    t1 = _raster_boundary_along(bitmap, b_p, n)
    t2 = _raster_boundary_along(bitmap, b_p, -n)
    return CrossSection(b_p, b_p + t1 * n, b_p - t2 * n)


def realize_keypoint(mask: BodyPartMask, spec: LimbKeypointSpec) -> np.ndarray:
    """Pixel location of a limb keypoint spec on this mask."""
    if spec.limb != mask.limb:
        raise ValueError(f"spec is for {spec.limb.value}, mask is {mask.limb.value}")
    section = cross_section(mask, spec.line_fraction)
    p_t = spec.thickness
    if section.is_degenerate:
        if p_t > 0.0:
            raise ValueError("nonzero thickness requested on a degenerate cross-section")
        return section.projection
    c = section.side1 if spec.signed_thickness >= 0.0 else section.side2
    return (1.0 - p_t) * section.projection + p_t * c


def sample_keypoint(
    mask: BodyPartMask, rng: np.random.Generator, sigma: float = 1.0
) -> tuple[LimbKeypointSpec, np.ndarray]:
    """Draw one random limb keypoint.

    The bone fraction is uniform; the thickness magnitude is max(0, 1 - |z|)
    with z ~ Normal(0, sigma^2), which concentrates samples near the mask
    boundary, and the sign of z picks the side. Retries when the sampled
    projection has no cross-section (possible for concave masks); raises
    GenerationFailedError once the retry budget is exhausted.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    for _ in range(_SAMPLE_RETRIES):
        p_b = float(rng.random())
        z = float(rng.normal(0.0, sigma))
        p_t = max(0.0, 1.0 - abs(z))
        tau = p_t if z >= 0.0 else -p_t
        try:
            section = cross_section(mask, p_b)
        except NoSectionError:
            continue
        if section.is_degenerate:
            continue
        spec = LimbKeypointSpec(mask.limb, p_b, tau)
        c = section.side1 if tau >= 0.0 else section.side2
        point = (1.0 - p_t) * section.projection + p_t * c
        return spec, point
    raise GenerationFailedError(
        f"no valid keypoint on {mask.limb.value} after {_SAMPLE_RETRIES} attempts"
    )


def point_in_mask(mask: BodyPartMask, q) -> bool:
    """Whether a point lies inside the mask (boundary inclusive for polygons)."""
    q = _as_point(q)
    if mask.is_polygon:
        return _point_in_polygon(mask, q)
    return _raster_inside(mask.bitmap, q)


def classify_prediction(
    mask: BodyPartMask, predicted, ground_truth_spec: LimbKeypointSpec
) -> PredictionClassification:
    """Classify a predicted point against the ground-truth side.

    The prediction gets its own projection onto the bone segment and its own
    cross-section; the thickness ratio is the distance from that projection
    divided by the distance to the boundary crossing on the prediction's own
    side. Unresolvable when the projection falls off the bone segment, the
    cross-section fails, or the point lies beyond its nearest boundary
    crossing and outside the mask.
    """
    predicted = _as_point(predicted)
    bone = mask.bone()
    u = float(np.dot(predicted - mask.endpoint_a, bone) / np.dot(bone, bone))
    if not (0.0 <= u <= 1.0):
        return PredictionClassification(PredictionSide.UNRESOLVABLE, None)
    try:
        section = cross_section(mask, u)
    except NoSectionError:
        return PredictionClassification(PredictionSide.UNRESOLVABLE, None)
    n = _unit_normal(bone)
    h = float(np.dot(predicted - section.projection, n))
    gt_side = 1.0 if ground_truth_spec.signed_thickness >= 0.0 else -1.0
    if section.is_degenerate:
        if abs(h) <= _BOUNDARY_EPS:
            return PredictionClassification(PredictionSide.SAME_SIDE, 0.0)
        return PredictionClassification(PredictionSide.UNRESOLVABLE, None)
    if abs(h) <= _BOUNDARY_EPS:
        pred_side = gt_side  # on the bone line: side is immaterial, ratio 0
    else:
        pred_side = math.copysign(1.0, h)
    denom = section.half_width_1 if pred_side > 0 else section.half_width_2
    if denom <= _BOUNDARY_EPS:
        return PredictionClassification(PredictionSide.UNRESOLVABLE, None)
    ratio = abs(h) / denom
    if ratio > 1.0 + 1e-9 and not point_in_mask(mask, predicted):
        # Past the nearest crossing and not in a farther part of the mask.
        return PredictionClassification(PredictionSide.UNRESOLVABLE, None)
    side = PredictionSide.SAME_SIDE if pred_side == gt_side else PredictionSide.OPPOSITE_SIDE
    return PredictionClassification(side, ratio)


def rasterize_polygon(mask: BodyPartMask, scale: float = 1.0) -> BodyPartMask:
    """Convert a polygon mask to a raster mask at `scale` pixels per unit.

    A pixel is set iff its center lies inside the polygon. Endpoints are
    scaled along with the geometry, so the result is a self-contained mask in
    the scaled coordinate frame. The polygon must lie in the positive
    quadrant.
    """
    if not mask.is_polygon:
        raise ValueError("mask is already a raster mask")
    poly = mask.polygon * scale
    if poly.min() < 0.0:
        raise ValueError("polygon must lie in the positive quadrant to rasterize")
    w = int(math.ceil(poly[:, 0].max())) + 1
    h = int(math.ceil(poly[:, 1].max())) + 1
    cx = np.arange(w) + 0.5
    cy = np.arange(h) + 0.5
    gx, gy = np.meshgrid(cx, cy)
    inside = _points_in_polygon_grid(poly, gx, gy)
    return BodyPartMask(
        limb=mask.limb,
        endpoint_a=mask.endpoint_a * scale,
        endpoint_b=mask.endpoint_b * scale,
        bitmap=inside,
    )


def _points_in_polygon_grid(
    polygon: np.ndarray, gx: np.ndarray, gy: np.ndarray
) -> np.ndarray:
    """Vectorized even-odd test of a point grid against one polygon."""
    inside = np.zeros(gx.shape, dtype=bool)
    v0 = polygon
    v1 = np.roll(polygon, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(v0, v1):
        cond = (y0 > gy) != (y1 > gy)
        if y1 == y0:
            continue
        xs = x0 + (gy - y0) / (y1 - y0) * (x1 - x0)
        inside ^= cond & (xs > gx)
    return inside
