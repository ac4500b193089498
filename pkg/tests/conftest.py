"""Shared fixtures and independent geometric oracles.

The raster-scan oracle here must stay independent of the library: it builds
its bitmap with matplotlib's point-in-polygon and walks the cross-section
line in fixed steps, never touching the package's intersection code.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from matplotlib.path import Path as MplPath

from limbpoints import BodyPartMask, Limb


def rect_mask(limb=Limb.LEFT_UPPER_ARM) -> BodyPartMask:
    """The workhorse example: x in [0, 10], y in [-2, 3], bone along y=0."""
    return BodyPartMask(
        limb=limb,
        endpoint_a=(0.0, 0.0),
        endpoint_b=(10.0, 0.0),
        polygon=np.array([[0, -2], [10, -2], [10, 3], [0, 3]], dtype=float),
    )


def circle_mask(n_vertices: int = 256) -> BodyPartMask:
    """Radius-4 disc with the bone on its horizontal diameter."""
    th = np.linspace(0.0, 2.0 * math.pi, n_vertices, endpoint=False)
    return BodyPartMask(
        limb=Limb.LEFT_FOREARM,
        endpoint_a=(-4.0, 0.0),
        endpoint_b=(4.0, 0.0),
        polygon=np.stack([4.0 * np.cos(th), 4.0 * np.sin(th)], axis=1),
    )


def random_capsule_mask(rng: np.random.Generator) -> BodyPartMask:
    """A random capsule in the positive quadrant."""
    from limbpoints import capsule_polygon

    hw = rng.uniform(3.0, 9.0)
    a = rng.uniform((hw + 2, hw + 2), (40, 40))
    ang = rng.uniform(0, 2 * math.pi)
    ln = rng.uniform(3 * hw, 40.0)
    b = a + ln * np.array([math.cos(ang), math.sin(ang)])
    b = np.clip(b, hw + 2, 78.0)
    if np.linalg.norm(b - a) < 2.2 * hw:  # clipping may shorten the axis
        b = a + np.array([2.5 * hw, 0.0])
    return BodyPartMask(
        limb=Limb.LEFT_THIGH,
        endpoint_a=a,
        endpoint_b=b,
        polygon=capsule_polygon(a, b, hw),
    )


def random_star_mask(rng: np.random.Generator, n_vertices: int = 24) -> BodyPartMask:
    """A random star-shaped (radial) polygon; simple by construction and
    usually concave. The bone spans the shape's guaranteed-interior core."""
    center = rng.uniform((30, 30), (50, 50))
    r = rng.uniform(8.0, 20.0, size=n_vertices)
    th = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n_vertices))
    if np.min(np.diff(th)) < 1e-3:
        th = np.linspace(0.0, 2.0 * math.pi, n_vertices, endpoint=False)
    poly = center + np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    d = np.array([math.cos(ang), math.sin(ang)])
    reach = 0.6 * r.min()
    return BodyPartMask(
        limb=Limb.RIGHT_LOWER_LEG,
        endpoint_a=center - reach * d,
        endpoint_b=center + reach * d,
        polygon=poly,
    )


class RasterScanOracle:
    """Brute-force cross-section finder on a scaled bitmap of the polygon."""

    def __init__(self, polygon: np.ndarray, scale: float = 4.0):
        self.scale = scale
        self.x0, self.y0 = polygon.min(axis=0) - 2.0
        x1, y1 = polygon.max(axis=0) + 2.0
        w = int(math.ceil((x1 - self.x0) * scale))
        h = int(math.ceil((y1 - self.y0) * scale))
        xs = self.x0 + (np.arange(w) + 0.5) / scale
        ys = self.y0 + (np.arange(h) + 0.5) / scale
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        self.bitmap = MplPath(polygon).contains_points(pts).reshape(h, w)
        self.limit = float(np.hypot(x1 - self.x0, y1 - self.y0)) + 4.0

    def inside(self, q) -> bool:
        c = int(math.floor((q[0] - self.x0) * self.scale))
        r = int(math.floor((q[1] - self.y0) * self.scale))
        h, w = self.bitmap.shape
        return 0 <= r < h and 0 <= c < w and bool(self.bitmap[r, c])

    def cross_section(self, a, b, p_b: float):
        """(side1, side2) crossings, or None when the projection is outside."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        bp = a + p_b * (b - a)
        d = b - a
        n = np.array([-d[1], d[0]])
        n /= np.linalg.norm(n)
        if not self.inside(bp):
            return None
        step = 1.0 / self.scale  # one bitmap pixel per step
        sides = []
        for sign in (1.0, -1.0):
            t = step
            hit = None
            while t <= self.limit:
                if not self.inside(bp + sign * t * n):
                    hit = t - step / 2.0
                    break
                t += step
            if hit is None:
                return None
            sides.append(bp + sign * hit * n)
        return sides[0], sides[1]


@pytest.fixture
def rect():
    return rect_mask()


@pytest.fixture
def circle():
    return circle_mask()
