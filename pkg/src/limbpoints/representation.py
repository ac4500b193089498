"""Network-facing keypoint encodings.

Two interchangeable representations of a limb keypoint spec:

* vectorized: a length-n keypoint vector carrying interpolation weights
  (1 - p_b, p_b) on the enclosing fixed keypoints, plus a length-3 thickness
  vector carrying the side and magnitude of the signed thickness;
* norm pose: 2-D coordinates on a canonical template body whose limbs are
  capsules of fixed half-width.

Both directions are provided so round-trips can be checked; the decoders are
strict about malformed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Limb, LimbKeypointSpec
from .skeleton import Skeleton, COCO17, JUMP20, get_skeleton

__all__ = [
    "NormPoseTemplate",
    "NotOnLimbError",
    "encode_vectorized",
    "encode_fixed_keypoint",
    "decode_vectorized",
    "encode_norm_pose",
    "decode_norm_pose",
    "default_norm_pose_template",
    "load_norm_pose_template",
]

_VEC_TOL = 1e-9


class NotOnLimbError(Exception):
    """A norm-pose coordinate lies on no template limb capsule."""


@dataclass(frozen=True)
class NormPoseTemplate:
    """Canonical template body: normalized fixed-keypoint coordinates plus a
    capsule half-width per limb, everything inside the unit square."""

    skeleton: Skeleton
    keypoint_coords: np.ndarray  # (n, 2)
    half_widths: dict[Limb, float]

    def __post_init__(self):
        coords = np.asarray(self.keypoint_coords, dtype=np.float64)
        if coords.shape != (self.skeleton.n_keypoints, 2):
            raise ValueError("keypoint_coords must be (n_keypoints, 2)")
        if coords.min() < 0.0 or coords.max() > 1.0:
            raise ValueError("template coordinates must lie in [0, 1]^2")
        for limb in self.skeleton.limbs():
            if self.half_widths.get(limb, 0.0) <= 0.0:
                raise ValueError(f"missing or non-positive half-width for {limb.value}")
        object.__setattr__(self, "keypoint_coords", coords)

    def limb_bone(self, limb: Limb) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.skeleton.limb_endpoints[limb]
        return self.keypoint_coords[i], self.keypoint_coords[j]

    def to_dict(self) -> dict:
        return {
            "skeleton": self.skeleton.name,
            "keypoint_coords": self.keypoint_coords.tolist(),
            "half_widths": {l.value: w for l, w in self.half_widths.items()},
        }

    @staticmethod
    def from_dict(d: dict, skeleton: Skeleton | None = None) -> "NormPoseTemplate":
        skel = skeleton if skeleton is not None else get_skeleton(d["skeleton"])
        return NormPoseTemplate(
            skeleton=skel,
            keypoint_coords=np.asarray(d["keypoint_coords"], dtype=np.float64),
            half_widths={Limb(k): float(v) for k, v in d["half_widths"].items()},
        )


# ---------------------------------------------------------------------------
# vectorized representation


def encode_vectorized(
    spec: LimbKeypointSpec, skeleton: Skeleton
) -> tuple[np.ndarray, np.ndarray]:
    """Spec -> (keypoint vector, thickness vector).

    The keypoint vector places 1 - p_b on the limb's proximal fixed keypoint
    and p_b on the distal one. The thickness vector is (tau, 1 - tau, 0) for
    tau >= 0 and (0, 1 - |tau|, |tau|) for tau < 0, so entries always form a
    convex combination.
    """
    try:
        i, j = skeleton.limb_endpoints[spec.limb]
    except KeyError:
        raise ValueError(f"skeleton {skeleton.name} has no limb {spec.limb.value}") from None
    kv = np.zeros(skeleton.n_keypoints)
    kv[i] = 1.0 - spec.line_fraction
    kv[j] = spec.line_fraction
    return kv, _thickness_vector(spec.signed_thickness)


def encode_fixed_keypoint(index: int, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """One-hot keypoint vector and neutral thickness vector for a fixed keypoint."""
    if not (0 <= index < skeleton.n_keypoints):
        raise ValueError(f"keypoint index {index} out of range for {skeleton.name}")
    kv = np.zeros(skeleton.n_keypoints)
    kv[index] = 1.0
    return kv, _thickness_vector(0.0)


def _thickness_vector(tau: float) -> np.ndarray:
    if tau >= 0.0:
        return np.array([tau, 1.0 - tau, 0.0])
    return np.array([0.0, 1.0 - abs(tau), abs(tau)])


def decode_vectorized(
    kv: np.ndarray, tv: np.ndarray, skeleton: Skeleton
) -> LimbKeypointSpec:
    """Exact inverse of encode_vectorized.

    A one-hot keypoint vector decodes onto the limb whose proximal endpoint is
    that keypoint (falling back to a distal endpoint with p_b = 1); a one-hot
    at a keypoint on no limb is a domain error.
    """
    kv = np.asarray(kv, dtype=np.float64)
    tv = np.asarray(tv, dtype=np.float64)
    if kv.shape != (skeleton.n_keypoints,):
        raise ValueError("keypoint vector length does not match the skeleton")
    _check_convex(kv, "keypoint vector")
    _check_convex(tv, "thickness vector")
    if tv.shape != (3,) or (tv[0] > _VEC_TOL and tv[2] > _VEC_TOL):
        raise ValueError("thickness vector must have a zero first or last entry")
    tau = float(tv[0]) if tv[0] >= tv[2] else -float(tv[2])
    if abs(tv[1] - (1.0 - abs(tau))) > _VEC_TOL:
        raise ValueError("thickness vector middle entry must be 1 - |tau|")
    nonzero = np.flatnonzero(kv > _VEC_TOL)
    if len(nonzero) == 1:
        k = int(nonzero[0])
        limb = skeleton.limb_for_endpoint_a(k)
        if limb is not None:
            return LimbKeypointSpec(limb, 0.0, tau)
        limb = skeleton.limb_for_endpoint_b(k)
        if limb is not None:
            return LimbKeypointSpec(limb, 1.0, tau)
        raise ValueError(
            f"keypoint {skeleton.keypoint_names[k]!r} lies on no limb; "
            "cannot decode to a limb spec"
        )
    if len(nonzero) != 2:
        raise ValueError("keypoint vector must have one or two nonzero entries")
    i, j = (int(nonzero[0]), int(nonzero[1]))
    match = skeleton.limb_for_pair(i, j)
    if match is None:
        raise ValueError(f"keypoint pair ({i}, {j}) encloses no limb")
    limb, reversed_ = match
    p_b = float(kv[i]) if reversed_ else float(kv[j])
    return LimbKeypointSpec(limb, p_b, tau)


def _check_convex(v: np.ndarray, what: str) -> None:
    if v.min() < -_VEC_TOL or v.max() > 1.0 + _VEC_TOL:
        raise ValueError(f"{what} entries must lie in [0, 1]")
    if abs(v.sum() - 1.0) > _VEC_TOL:
        raise ValueError(f"{what} entries must sum to 1")


# ---------------------------------------------------------------------------
# norm pose representation


def encode_norm_pose(spec: LimbKeypointSpec, template: NormPoseTemplate) -> np.ndarray:
    """Spec -> normalized template coordinate in [0, 1]^2.

    Applies the same projection/thickness construction as on a real mask, with
    the template limb acting as a capsule: the cross-section half-width equals
    the limb's configured half-width everywhere along the bone.
    """
    if spec.limb not in template.skeleton.limb_endpoints:
        raise ValueError(f"template has no limb {spec.limb.value}")
    p, q = template.limb_bone(spec.limb)
    hw = template.half_widths[spec.limb]
    d = q - p
    n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    b_p = p + spec.line_fraction * d
    coord = b_p + spec.signed_thickness * hw * n
    return np.clip(coord, 0.0, 1.0)


def norm_pose_fixed_keypoint(index: int, template: NormPoseTemplate) -> np.ndarray:
    """Template coordinate of a fixed keypoint."""
    return template.keypoint_coords[index].copy()


def decode_norm_pose(coord, template: NormPoseTemplate) -> LimbKeypointSpec:
    """Template coordinate -> spec, via projection onto each limb capsule.

    Limbs are tried in canonical order, so points on a shared joint resolve to
    the lowest-indexed limb. Raises NotOnLimbError for coordinates on no limb.
    """
    coord = np.asarray(coord, dtype=np.float64).reshape(2)
    for limb in template.skeleton.limbs():
        p, q = template.limb_bone(limb)
        hw = template.half_widths[limb]
        d = q - p
        dd = float(np.dot(d, d))
        u = float(np.dot(coord - p, d) / dd)
        if not (-_VEC_TOL <= u <= 1.0 + _VEC_TOL):
            continue
        u = min(max(u, 0.0), 1.0)
        n = np.array([-d[1], d[0]]) / np.sqrt(dd)
        h = float(np.dot(coord - (p + u * d), n))
        if abs(h) > hw * (1.0 + _VEC_TOL):
            continue
        tau = min(max(h / hw, -1.0), 1.0)
        return LimbKeypointSpec(limb, u, tau)
    raise NotOnLimbError(f"coordinate {coord.tolist()} lies on no template limb")


# ---------------------------------------------------------------------------
# built-in templates

# Upright, symmetric chart. Arm columns sit outboard of the leg columns so
# that no two limb capsules overlap away from their shared joints; otherwise
# decode tie-breaks would corrupt round-trips.
_COCO_TEMPLATE_COORDS = {
    "nose": (0.50, 0.06),
    "left_eye": (0.47, 0.045),
    "right_eye": (0.53, 0.045),
    "left_ear": (0.44, 0.06),
    "right_ear": (0.56, 0.06),
    "left_shoulder": (0.28, 0.30),
    "right_shoulder": (0.72, 0.30),
    "left_elbow": (0.28, 0.46),
    "right_elbow": (0.72, 0.46),
    "left_wrist": (0.28, 0.62),
    "right_wrist": (0.72, 0.62),
    "left_hip": (0.42, 0.55),
    "right_hip": (0.58, 0.55),
    "left_knee": (0.42, 0.73),
    "right_knee": (0.58, 0.73),
    "left_ankle": (0.42, 0.91),
    "right_ankle": (0.58, 0.91),
}

_JUMP_EXTRA_COORDS = {
    "head": (0.50, 0.06),
    "neck": (0.50, 0.22),
    "left_big_toe": (0.39, 0.97),
    "right_big_toe": (0.61, 0.97),
    "left_small_toe": (0.45, 0.965),
    "right_small_toe": (0.55, 0.965),
    "left_heel": (0.42, 0.945),
    "right_heel": (0.58, 0.945),
}

_DEFAULT_HALF_WIDTHS = {
    Limb.LEFT_UPPER_ARM: 0.045,
    Limb.RIGHT_UPPER_ARM: 0.045,
    Limb.LEFT_FOREARM: 0.035,
    Limb.RIGHT_FOREARM: 0.035,
    Limb.LEFT_THIGH: 0.06,
    Limb.RIGHT_THIGH: 0.06,
    Limb.LEFT_LOWER_LEG: 0.045,
    Limb.RIGHT_LOWER_LEG: 0.045,
}


def default_norm_pose_template(skeleton: Skeleton = COCO17) -> NormPoseTemplate:
    """Built-in template for the COCO and jump skeletons."""
    table = dict(_COCO_TEMPLATE_COORDS)
    if skeleton is JUMP20 or skeleton.name == "jump20":
        table.update(_JUMP_EXTRA_COORDS)
    try:
        coords = np.array([table[name] for name in skeleton.keypoint_names])
    except KeyError as err:
        raise ValueError(
            f"no built-in template coordinates for keypoint {err.args[0]!r}"
        ) from None
    return NormPoseTemplate(skeleton, coords, dict(_DEFAULT_HALF_WIDTHS))


def load_norm_pose_template(path: str | Path, skeleton: Skeleton | None = None) -> NormPoseTemplate:
    """Load a template from a JSON config file."""
    with open(path) as fh:
        return NormPoseTemplate.from_dict(json.load(fh), skeleton)
