"""Overlay rendering: predicted keypoint grids and iso-thickness polylines.

Images are darkened before drawing so the overlays stay legible, and small
inputs are upscaled with nearest-neighbor so dots and lines survive viewing.
Outputs come in two flavors: a raster PIL image and a standalone SVG string
with the darkened frame embedded.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image, ImageDraw

from .data import PoseInstance, make_eval_grid
from .geometry import Limb, LimbKeypointSpec, realize_keypoint

__all__ = ["LIMB_COLORS", "render_overlay", "overlay_to_svg"]

LIMB_COLORS = {
    Limb.LEFT_UPPER_ARM: (230, 60, 60),
    Limb.RIGHT_UPPER_ARM: (240, 150, 40),
    Limb.LEFT_FOREARM: (230, 220, 50),
    Limb.RIGHT_FOREARM: (110, 220, 60),
    Limb.LEFT_THIGH: (60, 220, 200),
    Limb.RIGHT_THIGH: (70, 130, 240),
    Limb.LEFT_LOWER_LEG: (150, 80, 240),
    Limb.RIGHT_LOWER_LEG: (240, 90, 200),
}

_FIXED_COLOR = (255, 40, 40)
_ISO_LINES_PER_SIDE = 4
_LINE_SAMPLES = 25


def _blend(limb: Limb, tau: float) -> tuple[int, int, int]:
    """White on the bone line, fading to the pure limb color at the edge."""
    t = abs(tau)
    color = LIMB_COLORS[limb]
    return tuple(int(round(255 * (1 - t) + c * t)) for c in color)


def render_overlay(
    instance: PoseInstance,
    predict_fn=None,
    mode: str = "grid",
    grid: tuple[int, int] = (4, 5),
    darken: float = 0.5,
    upscale: int = 8,
    image_root=None,
):
    """Draw keypoints over a darkened instance image.

    `predict_fn(queries) -> (K, 2) array` supplies point locations; None draws
    the analytic ground truth. Returns (overlaid image, clean darkened frame,
    overlay element list); the frame and elements feed the SVG writer.
    """
    if mode not in ("grid", "lines"):
        raise ValueError(f"unknown render mode {mode!r}")
    img = instance.get_image(image_root)
    base = np.clip(img * 255.0 * (1.0 - darken), 0, 255).astype(np.uint8)
    frame = Image.fromarray(base).convert("RGB")
    frame = frame.resize((frame.width * upscale, frame.height * upscale), Image.NEAREST)
    pil = frame.copy()
    draw = ImageDraw.Draw(pil)
    elements: list[dict] = []

    if mode == "grid":
        specs = make_eval_grid(instance, *grid) if grid[0] * grid[1] > 0 else []
        points = _locate(instance, specs, predict_fn)
        for spec, pt in zip(specs, points):
            _dot(draw, elements, pt, _blend(spec.limb, spec.signed_thickness), upscale)
        for x, y, v in instance.keypoints:
            if v > 0:
                _dot(draw, elements, (x, y), _FIXED_COLOR, upscale, radius=0.8)
    else:
        taus = np.linspace(-1.0, 1.0, 2 * _ISO_LINES_PER_SIDE + 1)
        fractions = np.linspace(0.02, 0.98, _LINE_SAMPLES)
        for limb in sorted(instance.masks, key=list(Limb).index):
            for tau in taus:
                specs = [LimbKeypointSpec(limb, float(p), float(tau)) for p in fractions]
                pts = _locate(instance, specs, predict_fn)
                _polyline(draw, elements, pts, _blend(limb, tau), upscale)
    return pil, frame, elements


def _locate(instance: PoseInstance, specs, predict_fn) -> np.ndarray:
    if not specs:
        return np.zeros((0, 2))
    if predict_fn is not None:
        return np.asarray(predict_fn(list(specs)), dtype=np.float64).reshape(len(specs), 2)
    return np.array([realize_keypoint(instance.masks[s.limb], s) for s in specs])


def _dot(draw, elements, pt, color, upscale, radius: float = 0.6):
    x, y = float(pt[0]) * upscale, float(pt[1]) * upscale
    r = radius * upscale * 0.5
    draw.ellipse([x - r, y - r, x + r, y + r], fill=color)
    elements.append({"kind": "dot", "x": x, "y": y, "r": r, "color": color})


def _polyline(draw, elements, pts, color, upscale):
    coords = [(float(x) * upscale, float(y) * upscale) for x, y in pts]
    draw.line(coords, fill=color, width=max(upscale // 4, 1))
    elements.append({"kind": "line", "points": coords, "color": color})


def overlay_to_svg(frame: Image.Image, elements: list[dict]) -> str:
    """Standalone SVG: the clean darkened frame as an embedded PNG plus the
    overlays as vector elements, so the drawing stays editable downstream."""
    w, h = frame.size
    buf = io.BytesIO()
    frame.save(buf, format="PNG")
    b64 = base64.b64encode(buf.getvalue()).decode("ascii")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<image href="data:image/png;base64,{b64}" width="{w}" height="{h}"/>',
    ]
    for el in elements:
        c = "rgb({},{},{})".format(*el["color"])
        if el["kind"] == "dot":
            parts.append(
                f'<circle cx="{el["x"]:.1f}" cy="{el["y"]:.1f}" r="{el["r"]:.1f}" fill="{c}"/>'
            )
        else:
            pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in el["points"])
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts)
