"""Skeleton definitions: fixed keypoint names, limb-to-endpoint wiring, and
per-keypoint evaluation constants.

Two skeletons ship as built-ins: the 17-keypoint COCO set and a 20-keypoint
athletics set (head/neck plus feet detail). Custom skeletons load from JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import Limb

__all__ = ["Skeleton", "COCO17", "JUMP20", "get_skeleton", "load_skeleton"]


@dataclass(frozen=True)
class Skeleton:
    """Fixed-keypoint table plus the limb wiring between keypoints.

    `limb_endpoints[limb] = (i, j)` names the keypoint indices enclosing each
    limb, ordered from the proximal joint (endpoint_a) to the distal one.
    `torso_pair` is the (left shoulder, right hip) index pair whose distance
    normalizes PCK. `oks_constants` are the per-keypoint falloff constants for
    OKS; None when the skeleton defines none.
    """

    name: str
    keypoint_names: tuple[str, ...]
    limb_endpoints: dict[Limb, tuple[int, int]] = field(repr=False)
    torso_pair: tuple[int, int] = (0, 0)
    oks_constants: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.keypoint_names)
        if len(set(self.keypoint_names)) != n:
            raise ValueError("keypoint names must be unique")
        for limb, (i, j) in self.limb_endpoints.items():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"bad endpoint indices {(i, j)} for {limb.value}")
        if self.oks_constants is not None and len(self.oks_constants) != n:
            raise ValueError("oks_constants length must match keypoint count")

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoint_names)

    def index(self, name: str) -> int:
        return self.keypoint_names.index(name)

    def limbs(self) -> tuple[Limb, ...]:
        """Limbs in canonical (declaration) order; used for tie-breaks."""
        return tuple(l for l in Limb if l in self.limb_endpoints)

    def limb_for_endpoint_a(self, index: int) -> Limb | None:
        for limb in self.limbs():
            if self.limb_endpoints[limb][0] == index:
                return limb
        return None

    def limb_for_endpoint_b(self, index: int) -> Limb | None:
        for limb in self.limbs():
            if self.limb_endpoints[limb][1] == index:
                return limb
        return None

    def limb_for_pair(self, i: int, j: int) -> tuple[Limb, bool] | None:
        """Limb whose endpoints are {i, j}; the flag is True when (i, j) is
        reversed relative to the limb's (endpoint_a, endpoint_b) order."""
        for limb, (a, b) in self.limb_endpoints.items():
            if (a, b) == (i, j):
                return limb, False
            if (a, b) == (j, i):
                return limb, True
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "keypoints": list(self.keypoint_names),
            "limbs": {l.value: list(ij) for l, ij in self.limb_endpoints.items()},
            "torso_pair": list(self.torso_pair),
            "oks_constants": list(self.oks_constants) if self.oks_constants else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "Skeleton":
        return Skeleton(
            name=d["name"],
            keypoint_names=tuple(d["keypoints"]),
            limb_endpoints={Limb(k): (int(i), int(j)) for k, (i, j) in d["limbs"].items()},
            torso_pair=tuple(d["torso_pair"]),
            oks_constants=tuple(d["oks_constants"]) if d.get("oks_constants") else None,
        )


def _limb_map(names: tuple[str, ...]) -> dict[Limb, tuple[int, int]]:
    ix = {n: i for i, n in enumerate(names)}
    return {
        Limb.LEFT_UPPER_ARM: (ix["left_shoulder"], ix["left_elbow"]),
        Limb.RIGHT_UPPER_ARM: (ix["right_shoulder"], ix["right_elbow"]),
        Limb.LEFT_FOREARM: (ix["left_elbow"], ix["left_wrist"]),
        Limb.RIGHT_FOREARM: (ix["right_elbow"], ix["right_wrist"]),
        Limb.LEFT_THIGH: (ix["left_hip"], ix["left_knee"]),
        Limb.RIGHT_THIGH: (ix["right_hip"], ix["right_knee"]),
        Limb.LEFT_LOWER_LEG: (ix["left_knee"], ix["left_ankle"]),
        Limb.RIGHT_LOWER_LEG: (ix["right_knee"], ix["right_ankle"]),
    }


_COCO_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# Published COCO keypoint evaluation constants (k_i), indexed like _COCO_NAMES.
_COCO_OKS_CONSTANTS = (
    0.026, 0.025, 0.025, 0.035, 0.035,
    0.079, 0.079, 0.072, 0.072, 0.062, 0.062,
    0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)

COCO17 = Skeleton(
    name="coco17",
    keypoint_names=_COCO_NAMES,
    limb_endpoints=_limb_map(_COCO_NAMES),
    torso_pair=(_COCO_NAMES.index("left_shoulder"), _COCO_NAMES.index("right_hip")),
    oks_constants=_COCO_OKS_CONSTANTS,
)

_JUMP_NAMES = (
    "head",
    "neck",
    "right_shoulder",
    "left_shoulder",
    "right_elbow",
    "left_elbow",
    "right_wrist",
    "left_wrist",
    "right_hip",
    "left_hip",
    "right_knee",
    "left_knee",
    "right_ankle",
    "left_ankle",
    "right_big_toe",
    "left_big_toe",
    "right_small_toe",
    "left_small_toe",
    "right_heel",
    "left_heel",
)

JUMP20 = Skeleton(
    name="jump20",
    keypoint_names=_JUMP_NAMES,
    limb_endpoints=_limb_map(_JUMP_NAMES),
    torso_pair=(_JUMP_NAMES.index("left_shoulder"), _JUMP_NAMES.index("right_hip")),
    oks_constants=None,
)

_BUILTINS = {"coco17": COCO17, "jump20": JUMP20}


def get_skeleton(name: str) -> Skeleton:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown skeleton {name!r}; built-ins: {sorted(_BUILTINS)}") from None


def load_skeleton(path: str | Path) -> Skeleton:
    """Load a skeleton from a JSON config file."""
    with open(path) as fh:
        return Skeleton.from_dict(json.load(fh))
