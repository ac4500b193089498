"""Dataset handling.

Three concerns live here: ingesting COCO-style annotations with body-part
masks (polygons or uncompressed RLE bitmaps, plus an optional left/right
correction overlay), a canonical JSON instance format for fixtures and
intermediate artifacts, and a synthetic capsule-limb generator whose masks
are exact polygons so geometric ground truth stays analytic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import BodyPartMask, Limb, LimbKeypointSpec
from .skeleton import Skeleton, get_skeleton

__all__ = [
    "PoseInstance",
    "CapsuleSpec",
    "SyntheticBodySpec",
    "DATASET_FORMAT_VERSION",
    "DENSEPOSE_COARSE_PART_TO_LIMB",
    "rle_encode",
    "rle_decode",
    "capsule_polygon",
    "generate_synthetic",
    "random_body_spec",
    "split",
    "make_eval_grid",
    "load_dataset",
    "save_dataset",
    "load_image",
    "save_image",
]

DATASET_FORMAT_VERSION = 1

# DensePose's 14 coarse part labels, collapsed to the 8 limbs used here.
# Torso (1), hands (2, 3), feet (4, 5) and head (14) have no limb meaning.
DENSEPOSE_COARSE_PART_TO_LIMB = {
    6: Limb.RIGHT_THIGH,
    7: Limb.LEFT_THIGH,
    8: Limb.RIGHT_LOWER_LEG,
    9: Limb.LEFT_LOWER_LEG,
    10: Limb.LEFT_UPPER_ARM,
    11: Limb.RIGHT_UPPER_ARM,
    12: Limb.LEFT_FOREARM,
    13: Limb.RIGHT_FOREARM,
}


@dataclass
class PoseInstance:
    """One annotated person: fixed keypoints, limb masks, and an image
    reference (a path, an inline pixel buffer, or both)."""

    instance_id: int
    image_size: tuple[int, int]  # (H, W)
    keypoints: np.ndarray  # (n, 3): x, y, visibility (0/1/2)
    masks: dict[Limb, BodyPartMask]
    bbox: tuple[float, float, float, float]  # x, y, w, h
    image_path: str | None = None
    image: np.ndarray | None = None  # (H, W) float in [0, 1]
    generated: list[tuple[LimbKeypointSpec, np.ndarray]] = field(default_factory=list)

    def mask_for(self, limb: Limb) -> BodyPartMask | None:
        return self.masks.get(limb)

    def get_image(self, root: str | Path | None = None) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None:
            raise ValueError(f"instance {self.instance_id} has no image")
        path = Path(root) / self.image_path if root else Path(self.image_path)
        return load_image(path)

    def validate(self, skeleton: Skeleton) -> list[str]:
        """Invariant violations, empty when the instance is sound."""
        problems = []
        h, w = self.image_size
        kps = np.asarray(self.keypoints, dtype=np.float64)
        if kps.shape != (skeleton.n_keypoints, 3):
            return [f"keypoints shape {kps.shape} != ({skeleton.n_keypoints}, 3)"]
        vis = kps[:, 2] > 0
        inb = (kps[:, 0] >= 0) & (kps[:, 0] <= w) & (kps[:, 1] >= 0) & (kps[:, 1] <= h)
        for k in np.flatnonzero(vis & ~inb):
            problems.append(f"visible keypoint {skeleton.keypoint_names[k]} out of bounds")
        for limb, mask in self.masks.items():
            i, j = skeleton.limb_endpoints[limb]
            if not np.allclose(mask.endpoint_a, kps[i, :2], atol=1e-6):
                problems.append(f"{limb.value} endpoint_a differs from its fixed keypoint")
            if not np.allclose(mask.endpoint_b, kps[j, :2], atol=1e-6):
                problems.append(f"{limb.value} endpoint_b differs from its fixed keypoint")
        return problems


# ---------------------------------------------------------------------------
# run-length encoding (uncompressed counts, column-major, starting with zeros)


def rle_encode(bitmap: np.ndarray) -> dict:
    bmp = np.asarray(bitmap).astype(bool)
    h, w = bmp.shape
    flat = bmp.reshape(-1, order="F").astype(np.int8)
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0] == 1:  # counts must start with a zero-run
        counts = [0] + counts
    return {"size": [h, w], "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# synthetic capsule bodies


@dataclass(frozen=True)
class CapsuleSpec:
    limb: Limb
    endpoint_a: tuple[float, float]
    endpoint_b: tuple[float, float]
    half_width: float
    intensity: float


@dataclass(frozen=True)
class SyntheticBodySpec:
    """Fully explicit recipe for one synthetic instance; `seed` drives only
    the background noise, so equal specs render equal images."""

    image_size: tuple[int, int]  # (H, W)
    capsules: tuple[CapsuleSpec, ...]
    noise_level: float = 0.05
    seed: int = 0
    instance_id: int = 0

    def __post_init__(self):
        if not (2 <= len(self.capsules) <= 8):
            raise ValueError(f"need 2..8 capsules, got {len(self.capsules)}")
        h, w = self.image_size
        for cap in self.capsules:
            if cap.half_width < 2.0:
                raise ValueError(f"{cap.limb.value}: half-width must be >= 2 px")
            for p in (cap.endpoint_a, cap.endpoint_b):
                if not (0 <= p[0] < w and 0 <= p[1] < h):
                    raise ValueError(f"{cap.limb.value}: endpoint {p} outside the image")


def capsule_polygon(a, b, half_width: float, arc_points: int = 16) -> np.ndarray:
    """Exact-ish capsule outline: straight walls plus semicircular end caps.

    The wall tangent vertices are included exactly, so orthogonal
    cross-sections through the interior hit the straight walls at precisely
    the half-width.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    length = np.linalg.norm(d)
    if length <= 0:
        raise ValueError("capsule endpoints must be distinct")
    u = d / length
    n = np.array([-u[1], u[0]])
    base = math.atan2(n[1], n[0])
    # Both caps sweep clockwise from +n to -n (cap at b) and -n to +n (cap at
    # a), bulging away from the axis; the tangent vertices land exactly at
    # +/- half_width.
    angles_b = base - np.linspace(0.0, math.pi, arc_points + 1)
    angles_a = base - np.linspace(math.pi, 2.0 * math.pi, arc_points + 1)
    cap_b = b[None, :] + half_width * np.stack([np.cos(angles_b), np.sin(angles_b)], axis=1)
    cap_a = a[None, :] + half_width * np.stack([np.cos(angles_a), np.sin(angles_a)], axis=1)
    return np.vstack([cap_b, cap_a])


def _distance_to_segment(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    dd = dx * dx + dy * dy
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / dd, 0.0, 1.0)
    cx = ax + t * dx
    cy = ay + t * dy
    return np.hypot(px - cx, py - cy)


def generate_synthetic(spec: SyntheticBodySpec, skeleton: Skeleton | None = None) -> PoseInstance:
    """Render a capsule body over noise; masks are the exact capsule polygons."""
    skeleton = skeleton or get_skeleton("coco17")
    h, w = spec.image_size
    rng = np.random.default_rng(spec.seed)
    img = rng.uniform(0.0, spec.noise_level, size=(h, w))
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)

    keypoints = np.zeros((skeleton.n_keypoints, 3))
    masks: dict[Limb, BodyPartMask] = {}
    joint_coords: dict[int, tuple[float, float]] = {}
    for cap in spec.capsules:
        i, j = skeleton.limb_endpoints[cap.limb]
        for idx, p in ((i, cap.endpoint_a), (j, cap.endpoint_b)):
            prev = joint_coords.get(idx)
            if prev is not None and not np.allclose(prev, p, atol=1e-9):
                raise ValueError(
                    f"capsules disagree on keypoint {skeleton.keypoint_names[idx]}"
                )
            joint_coords[idx] = tuple(p)
        dist = _distance_to_segment(px, py, cap.endpoint_a, cap.endpoint_b)
        alpha = np.clip(cap.half_width + 0.5 - dist, 0.0, 1.0)  # 1 px soft edge
        img = np.maximum(img, cap.intensity * alpha)
        masks[cap.limb] = BodyPartMask(
            limb=cap.limb,
            endpoint_a=cap.endpoint_a,
            endpoint_b=cap.endpoint_b,
            polygon=capsule_polygon(cap.endpoint_a, cap.endpoint_b, cap.half_width),
        )
    for idx, (x, y) in joint_coords.items():
        keypoints[idx] = (x, y, 2.0)

    polys = np.vstack([m.polygon for m in masks.values()])
    x0 = max(float(polys[:, 0].min()), 0.0)
    y0 = max(float(polys[:, 1].min()), 0.0)
    x1 = min(float(polys[:, 0].max()), w)
    y1 = min(float(polys[:, 1].max()), h)
    return PoseInstance(
        instance_id=spec.instance_id,
        image_size=(h, w),
        keypoints=keypoints,
        masks=masks,
        bbox=(x0, y0, x1 - x0, y1 - y0),
        image=np.clip(img, 0.0, 1.0).astype(np.float32),
    )


# Distinct, stable brightness per limb class so the class is visually
# identifiable in synthetic scenes.
_LIMB_INTENSITY = {
    Limb.LEFT_UPPER_ARM: 0.55,
    Limb.RIGHT_UPPER_ARM: 0.62,
    Limb.LEFT_FOREARM: 0.69,
    Limb.RIGHT_FOREARM: 0.76,
    Limb.LEFT_THIGH: 0.83,
    Limb.RIGHT_THIGH: 0.90,
    Limb.LEFT_LOWER_LEG: 0.97,
    Limb.RIGHT_LOWER_LEG: 0.48,
}

# The torso pair (left shoulder, right hip) must be present for PCK, so these
# two limbs anchor every random body.
_MANDATORY_LIMBS = (Limb.LEFT_UPPER_ARM, Limb.RIGHT_THIGH)

# Canonical stick-figure joint chart (unit body height, origin at the pelvis).
# Random bodies are jittered similarity transforms of this chart, which keeps
# the layout distribution body-like instead of an arbitrary capsule soup.
_CANONICAL_JOINTS = {
    "left_shoulder": (-0.17, -0.38),
    "right_shoulder": (0.17, -0.38),
    "left_elbow": (-0.24, -0.14),
    "right_elbow": (0.24, -0.14),
    "left_wrist": (-0.28, 0.09),
    "right_wrist": (0.28, 0.09),
    "left_hip": (-0.10, 0.0),
    "right_hip": (0.10, 0.0),
    "left_knee": (-0.14, 0.26),
    "right_knee": (0.14, 0.26),
    "left_ankle": (-0.16, 0.50),
    "right_ankle": (0.16, 0.50),
}


def random_body_spec(
    rng: np.random.Generator,
    image_size: tuple[int, int] = (64, 48),
    n_limbs: tuple[int, int] = (2, 4),
    half_width: tuple[float, float] = (4.0, 6.0),
    noise_level: float = 0.05,
    instance_id: int = 0,
    skeleton: Skeleton | None = None,
) -> SyntheticBodySpec:
    """Random body: a jittered, scaled, rotated copy of the canonical chart.

    Always includes the two limbs carrying the torso endpoints; extra limbs
    are drawn at random up to the requested count. Joint positions are chain
    consistent by construction.
    """
    skeleton = skeleton or get_skeleton("coco17")
    h, w = image_size
    lo, hi = n_limbs
    count = int(rng.integers(lo, hi + 1))
    extra = [l for l in skeleton.limbs() if l not in _MANDATORY_LIMBS]
    order = rng.permutation(len(extra))
    chosen = list(_MANDATORY_LIMBS) + [extra[i] for i in order[: max(count - 2, 0)]]
    chosen = [l for l in skeleton.limbs() if l in chosen]  # canonical order

    for _ in range(100):
        scale = float(rng.uniform(42.0, 56.0))
        angle = float(rng.uniform(-0.3, 0.3))
        cos_a, sin_a = math.cos(angle), math.sin(angle)
        hw_by_limb = {limb: float(rng.uniform(*half_width)) for limb in chosen}
        joints: dict[int, np.ndarray] = {}
        for limb in chosen:
            i, j = skeleton.limb_endpoints[limb]
            for idx in (i, j):
                if idx in joints:
                    continue
                cx, cy = _CANONICAL_JOINTS[skeleton.keypoint_names[idx]]
                cx += float(rng.uniform(-0.025, 0.025))
                cy += float(rng.uniform(-0.025, 0.025))
                joints[idx] = scale * np.array([cx * cos_a - cy * sin_a, cx * sin_a + cy * cos_a])
        pts = np.array(list(joints.values()))
        margin = max(hw_by_limb.values()) + 1.5
        lo_xy = margin - pts.min(axis=0)
        hi_xy = np.array([w, h]) - margin - pts.max(axis=0)
        if np.any(hi_xy <= lo_xy):
            continue  # too large for the frame at this scale; retry
        shift = rng.uniform(lo_xy, hi_xy)
        capsules = []
        for limb in chosen:
            i, j = skeleton.limb_endpoints[limb]
            capsules.append(
                CapsuleSpec(
                    limb=limb,
                    endpoint_a=tuple(joints[i] + shift),
                    endpoint_b=tuple(joints[j] + shift),
                    half_width=hw_by_limb[limb],
                    intensity=float(
                        np.clip(_LIMB_INTENSITY[limb] + rng.uniform(-0.03, 0.03), 0.3, 1.0)
                    ),
                )
            )
        return SyntheticBodySpec(
            image_size=image_size,
            capsules=tuple(capsules),
            noise_level=noise_level,
            seed=int(rng.integers(2**31)),
            instance_id=instance_id,
        )
    raise RuntimeError("could not place a valid capsule layout")


# ---------------------------------------------------------------------------
# splits and evaluation grids


def split(instances: list, fractions: tuple[float, ...], seed: int) -> tuple[list, ...]:
    """Deterministic shuffled partition into len(fractions) parts."""
    fr = np.asarray(fractions, dtype=np.float64)
    if len(fr) == 0 or fr.min() < 0.0 or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    n = len(instances)
    order = np.random.default_rng(seed).permutation(n)
    edges = np.round(np.cumsum(fr) * n).astype(int)
    edges[-1] = n
    parts = []
    start = 0
    for end in edges:
        parts.append([instances[i] for i in order[start:end]])
        start = end
    return tuple(parts)


def make_eval_grid(instance: PoseInstance, rows_along_bone: int, cols_across: int) -> list[LimbKeypointSpec]:
    """Per-limb grid of specs: interior bone fractions x thickness values.

    Thickness columns span [-1, 1] inclusive; a single column degenerates to
    the bone line.
    """
    if rows_along_bone < 1 or cols_across < 1:
        raise ValueError("grid dimensions must be >= 1")
    fractions = (np.arange(rows_along_bone) + 1.0) / (rows_along_bone + 1.0)
    taus = np.array([0.0]) if cols_across == 1 else np.linspace(-1.0, 1.0, cols_across)
    specs = []
    for limb in sorted(instance.masks, key=list(Limb).index):
        for p_b in fractions:
            for tau in taus:
                specs.append(LimbKeypointSpec(limb, float(p_b), float(tau)))
    return specs


# ---------------------------------------------------------------------------
# serialization


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def _mask_to_dict(mask: BodyPartMask) -> dict:
    d = {
        "limb": mask.limb.value,
        "endpoint_a": mask.endpoint_a.tolist(),
        "endpoint_b": mask.endpoint_b.tolist(),
    }
    if mask.is_polygon:
        d["polygon"] = mask.polygon.tolist()
    else:
        d["rle"] = rle_encode(mask.bitmap)
    return d


def _mask_from_dict(d: dict) -> BodyPartMask:
    limb = Limb(d["limb"])
    kwargs = dict(limb=limb, endpoint_a=d["endpoint_a"], endpoint_b=d["endpoint_b"])
    if "polygon" in d:
        return BodyPartMask(polygon=np.asarray(d["polygon"], dtype=np.float64), **kwargs)
    return BodyPartMask(bitmap=rle_decode(d["rle"]), **kwargs)


def _instance_to_dict(inst: PoseInstance) -> dict:
    return {
        "id": inst.instance_id,
        "image_size": list(inst.image_size),
        "image_path": inst.image_path,
        "bbox": list(inst.bbox),
        "keypoints": np.asarray(inst.keypoints, dtype=np.float64).tolist(),
        "limbs": [_mask_to_dict(m) for _, m in sorted(inst.masks.items(), key=lambda kv: kv[0].value)],
        "generated": [
            {
                "limb": spec.limb.value,
                "line_fraction": spec.line_fraction,
                "signed_thickness": spec.signed_thickness,
                "point": np.asarray(point, dtype=np.float64).tolist(),
            }
            for spec, point in inst.generated
        ],
    }


def _instance_from_dict(d: dict) -> PoseInstance:
    masks = {}
    for md in d.get("limbs", []):
        mask = _mask_from_dict(md)
        masks[mask.limb] = mask
    generated = [
        (
            LimbKeypointSpec(Limb(g["limb"]), g["line_fraction"], g["signed_thickness"]),
            np.asarray(g["point"], dtype=np.float64),
        )
        for g in d.get("generated", [])
    ]
    return PoseInstance(
        instance_id=int(d["id"]),
        image_size=tuple(d["image_size"]),
        keypoints=np.asarray(d["keypoints"], dtype=np.float64),
        masks=masks,
        bbox=tuple(d["bbox"]),
        image_path=d.get("image_path"),
        generated=generated,
    )


def save_dataset(instances: list[PoseInstance], path: str | Path, skeleton: Skeleton) -> None:
    """Write the canonical one-document-per-split JSON format."""
    doc = {
        "format_version": DATASET_FORMAT_VERSION,
        "skeleton": skeleton.name,
        "instances": [_instance_to_dict(i) for i in instances],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_dataset(
    path: str | Path,
    skeleton: Skeleton | None = None,
    corrections_path: str | Path | None = None,
) -> tuple[list[PoseInstance], list[str]]:
    """Load canonical or COCO-style annotations.

    Returns (instances, report): malformed records are quarantined with a
    reason instead of failing the whole file. Unknown limb labels raise.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if "instances" in doc:
        skel = skeleton or get_skeleton(doc.get("skeleton", "coco17"))
        raw = [(d.get("id"), d) for d in doc["instances"]]
        parse = _instance_from_dict
    elif "annotations" in doc:
        skel = skeleton or get_skeleton("coco17")
        raw, parse = _coco_records(doc, skel)
    else:
        raise ValueError(f"{path}: neither canonical nor COCO-style annotations")

    corrections = {}
    if corrections_path is not None:
        with open(corrections_path) as fh:
            corrections = {int(k): v for k, v in json.load(fh).items()}

    instances: list[PoseInstance] = []
    report: list[str] = []
    for rec_id, rec in raw:
        try:
            inst = parse(rec)
        except (KeyError, TypeError, ValueError) as err:
            report.append(f"record {rec_id}: {err}")
            continue
        if inst.instance_id in corrections:
            inst = _apply_corrections(inst, corrections[inst.instance_id], skel)
        problems = inst.validate(skel)
        if problems:
            report.append(f"record {rec_id}: " + "; ".join(problems))
            continue
        instances.append(inst)
    return instances, report


def _apply_corrections(inst: PoseInstance, swaps: list, skeleton: Skeleton) -> PoseInstance:
    """Re-label limb masks per the overlay; endpoints re-anchor to the fixed
    keypoints of the new label."""
    masks = dict(inst.masks)
    for pair in swaps:
        la, lb = Limb(pair[0]), Limb(pair[1])
        ma, mb = masks.pop(la, None), masks.pop(lb, None)
        for new_limb, old_mask in ((la, mb), (lb, ma)):
            if old_mask is None:
                continue
            i, j = skeleton.limb_endpoints[new_limb]
            masks[new_limb] = BodyPartMask(
                limb=new_limb,
                endpoint_a=inst.keypoints[i, :2],
                endpoint_b=inst.keypoints[j, :2],
                polygon=old_mask.polygon,
                bitmap=old_mask.bitmap,
            )
    return replace(inst, masks=masks)


def _coco_records(doc: dict, skeleton: Skeleton):
    images = {im["id"]: im for im in doc.get("images", [])}

    def parse(ann: dict) -> PoseInstance:
        im = images[ann["image_id"]]
        kps = np.asarray(ann["keypoints"], dtype=np.float64).reshape(-1, 3)
        if kps.shape[0] != skeleton.n_keypoints:
            raise ValueError(
                f"{kps.shape[0]} keypoints, skeleton {skeleton.name} has {skeleton.n_keypoints}"
            )
        masks: dict[Limb, BodyPartMask] = {}
        for part in ann.get("body_parts", []):
            if "limb" in part:
                limb = Limb(part["limb"])  # unknown labels raise ValueError
            else:
                part_id = int(part["part_id"])
                if part_id not in DENSEPOSE_COARSE_PART_TO_LIMB:
                    continue  # torso/hands/feet/head: no limb meaning
                limb = DENSEPOSE_COARSE_PART_TO_LIMB[part_id]
            i, j = skeleton.limb_endpoints[limb]
            if kps[i, 2] <= 0 or kps[j, 2] <= 0:
                raise ValueError(f"{limb.value}: enclosing keypoints not labeled")
            kwargs = dict(limb=limb, endpoint_a=kps[i, :2], endpoint_b=kps[j, :2])
            if "polygon" in part:
                flat = np.asarray(part["polygon"], dtype=np.float64)
                masks[limb] = BodyPartMask(polygon=flat.reshape(-1, 2), **kwargs)
            elif "rle" in part:
                masks[limb] = BodyPartMask(bitmap=rle_decode(part["rle"]), **kwargs)
            else:
                raise ValueError(f"{limb.value}: neither polygon nor rle given")
        return PoseInstance(
            instance_id=int(ann["id"]),
            image_size=(int(im["height"]), int(im["width"])),
            keypoints=kps,
            masks=masks,
            bbox=tuple(ann.get("bbox", (0.0, 0.0, im["width"], im["height"]))),
            image_path=im.get("file_name"),
        )

    return [(ann.get("id"), ann) for ann in doc["annotations"]], parse
