"""Heatmap rendering and sub-pixel decoding.

Coordinates are continuous input-image pixels; heatmap cell (r, c) has its
center at input point ((c + 0.5) * stride_x, (r + 0.5) * stride_y). Rendering
and decoding are exact inverses at cell centers under this convention.

Two decoders: plain argmax, and distribution-aware refinement (Gaussian
modulation, log, second-order Taylor step at the mode).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "Heatmap",
    "DecodedPoint",
    "render_gaussian",
    "decode_argmax",
    "decode_dark",
    "heatmap_to_bytes",
    "heatmap_from_bytes",
]

DEFAULT_SHAPE = (64, 48)
DEFAULT_STRIDE = 4.0
DEFAULT_SIGMA = 2.0

_HEADER = struct.Struct("<4sHHIIddB")
_MAGIC = b"LPHM"
_VERSION = 1


@dataclass
class Heatmap:
    """A 2-D score grid over the input image at a fixed stride."""

    values: np.ndarray
    stride: tuple[float, float] = (DEFAULT_STRIDE, DEFAULT_STRIDE)  # (y, x)
    out_of_bounds: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 8 or v.shape[1] < 8:
            raise ValueError(f"heatmap must be at least 8x8, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("heatmap values must be finite")
        self.values = v
        if np.isscalar(self.stride):
            self.stride = (float(self.stride), float(self.stride))
        else:
            self.stride = (float(self.stride[0]), float(self.stride[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def input_size(self) -> tuple[float, float]:
        """(height, width) of the covered input region, in input pixels."""
        return self.shape[0] * self.stride[0], self.shape[1] * self.stride[1]


@dataclass(frozen=True)
class DecodedPoint:
    """Decoded input-space location with its peak score and decoder flags."""

    point: np.ndarray
    score: float
    low_confidence: bool = False
    fallback: bool = False


def render_gaussian(
    target,
    shape: tuple[int, int] = DEFAULT_SHAPE,
    sigma: float = DEFAULT_SIGMA,
    stride=DEFAULT_STRIDE,
) -> Heatmap:
    """Unnormalized Gaussian bump with peak 1 at `target` (input coords).

    `sigma` is in heatmap cells. A target outside the covered input region
    yields an all-zero map with the out_of_bounds flag set.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    target = np.asarray(target, dtype=np.float64).reshape(2)
    h, w = shape
    sy, sx = (stride, stride) if np.isscalar(stride) else stride
    if not (0.0 <= target[0] < w * sx and 0.0 <= target[1] < h * sy):
        return Heatmap(np.zeros(shape), (sy, sx), out_of_bounds=True)
    x_hm = target[0] / sx - 0.5
    y_hm = target[1] / sy - 0.5
    cols = np.arange(w) - x_hm
    rows = np.arange(h) - y_hm
    values = np.exp(-(rows[:, None] ** 2 + cols[None, :] ** 2) / (2.0 * sigma**2))
    return Heatmap(values, (sy, sx))


def _argmax_cell(values: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(values))  # first occurrence: smallest (row, col)
    return flat // values.shape[1], flat % values.shape[1]


def _cell_to_input(r: float, c: float, stride: tuple[float, float]) -> np.ndarray:
    return np.array([(c + 0.5) * stride[1], (r + 0.5) * stride[0]])


def decode_argmax(hm: Heatmap) -> DecodedPoint:
    """Input-space center of the maximum cell (ties: smallest row, then col)."""
    r, c = _argmax_cell(hm.values)
    flat = hm.values.ravel()
    low = bool(np.all(flat == flat[0]))
    return DecodedPoint(_cell_to_input(r, c, hm.stride), float(hm.values[r, c]), low_confidence=low)


def decode_dark(hm: Heatmap, smoothing_sigma: float = DEFAULT_SIGMA) -> DecodedPoint:
    """Sub-pixel refinement of the argmax.

    The map is modulated with a Gaussian kernel, log-transformed, and the mode
    is shifted by the Newton step -H^-1 grad evaluated at the argmax cell.
    Falls back to plain argmax (flagged) when the argmax touches the border or
    the Hessian is singular. The refined point stays within half a cell of the
    argmax center.
    """
    base = decode_argmax(hm)
    r, c = _argmax_cell(hm.values)
    h, w = hm.shape
    if base.low_confidence or r < 1 or c < 1 or r > h - 2 or c > w - 2:
        return DecodedPoint(base.point, base.score, base.low_confidence, fallback=True)
    sm = gaussian_filter(hm.values, smoothing_sigma, mode="constant")
    lg = np.log(np.maximum(sm, 1e-12))
    dx = 0.5 * (lg[r, c + 1] - lg[r, c - 1])
    dy = 0.5 * (lg[r + 1, c] - lg[r - 1, c])
    dxx = lg[r, c + 1] - 2.0 * lg[r, c] + lg[r, c - 1]
    dyy = lg[r + 1, c] - 2.0 * lg[r, c] + lg[r - 1, c]
    dxy = 0.25 * (lg[r + 1, c + 1] - lg[r + 1, c - 1] - lg[r - 1, c + 1] + lg[r - 1, c - 1])
    det = dxx * dyy - dxy * dxy
    if abs(det) < 1e-12:
        return DecodedPoint(base.point, base.score, fallback=True)
    # Newton step: -H^-1 @ [dx, dy]
    ox = -(dyy * dx - dxy * dy) / det
    oy = -(dxx * dy - dxy * dx) / det
    ox = float(np.clip(ox, -0.5, 0.5))
    oy = float(np.clip(oy, -0.5, 0.5))
    return DecodedPoint(_cell_to_input(r + oy, c + ox, hm.stride), base.score)


def heatmap_to_bytes(hm: Heatmap) -> bytes:
    """Flat binary dump: fixed header (dims, stride, flags) + float32 grid."""
    h, w = hm.shape
    header = _HEADER.pack(
        _MAGIC, _VERSION, 0, h, w, hm.stride[0], hm.stride[1], int(hm.out_of_bounds)
    )
    return header + hm.values.astype("<f4").tobytes()


def heatmap_from_bytes(data: bytes) -> Heatmap:
    magic, version, _, h, w, sy, sx, flags = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a recognized heatmap dump")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=h * w)
    return Heatmap(values.reshape(h, w).astype(np.float64), (sy, sx), bool(flags & 1))
