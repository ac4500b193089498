"""Evaluation metrics.

Thickness-aware metrics (mean thickness error and percentage of correct
thickness) measure whether predictions sit at the right fraction between a
limb's bone line and its boundary; they are deliberately insensitive to
absolute position. Standard keypoint metrics (PCK recall, OKS with
threshold-swept AP/AR over ground-truth-matched instances) cover absolute
accuracy. `evaluate` aggregates everything into one report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BodyPartMask,
    LimbKeypointSpec,
    PredictionSide,
    classify_prediction,
    realize_keypoint,
)
from .skeleton import Skeleton

__all__ = [
    "ThicknessError",
    "InstancePrediction",
    "EvalConfig",
    "EvalReport",
    "MAX_THICKNESS_ERROR",
    "thickness_error",
    "mte",
    "pct",
    "pck",
    "torso_size",
    "oks",
    "ap_ar",
    "evaluate",
]

log = logging.getLogger(__name__)

# A same-side ratio can reach 1 and the ground-truth thickness can reach 1,
# so 2 is the largest meaningful error; unresolvable predictions are pinned
# to it.
MAX_THICKNESS_ERROR = 2.0

DEFAULT_OKS_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))


@dataclass(frozen=True)
class ThicknessError:
    """Per-keypoint thickness evaluation record."""

    ground_truth_thickness: float
    side: PredictionSide
    error: float


def thickness_error(
    mask: BodyPartMask, gt_spec: LimbKeypointSpec, predicted
) -> ThicknessError:
    """Thickness error of a predicted point against a ground-truth spec.

    Same-side predictions score the absolute thickness-ratio difference;
    opposite-side predictions add the full ground-truth thickness to their own
    ratio; unresolvable predictions get the maximum error. Errors are clamped
    to [0, 2].
    """
    t0 = gt_spec.thickness
    cls = classify_prediction(mask, predicted, gt_spec)
    if cls.side is PredictionSide.UNRESOLVABLE:
        return ThicknessError(t0, cls.side, MAX_THICKNESS_ERROR)
    if cls.side is PredictionSide.SAME_SIDE:
        e = abs(t0 - cls.thickness_ratio)
    else:
        e = cls.thickness_ratio + t0
    return ThicknessError(t0, cls.side, min(max(e, 0.0), MAX_THICKNESS_ERROR))


def mte(errors: list[ThicknessError]) -> float:
    """Mean thickness error."""
    if not errors:
        raise ValueError("mte of an empty error list is undefined")
    return float(np.mean([e.error for e in errors]))


def pct(errors: list[ThicknessError], t: float = 0.2) -> float:
    """Fraction of thickness errors strictly below threshold `t`."""
    if not errors:
        raise ValueError("pct of an empty error list is undefined")
    if not (0.0 < t <= MAX_THICKNESS_ERROR):
        raise ValueError(f"pct threshold must be in (0, {MAX_THICKNESS_ERROR}], got {t}")
    return float(np.mean([e.error < t for e in errors]))


def torso_size(fixed_keypoints: np.ndarray, skeleton: Skeleton) -> float:
    """Distance between the skeleton's torso pair (left shoulder, right hip).

    `fixed_keypoints` is (n, 2) or (n, 3); with a visibility column, an
    invisible torso endpoint yields size 0 (instance should be skipped).
    """
    kps = np.asarray(fixed_keypoints, dtype=np.float64)
    i, j = skeleton.torso_pair
    if kps.shape[1] >= 3 and (kps[i, 2] <= 0 or kps[j, 2] <= 0):
        return 0.0
    return float(np.linalg.norm(kps[i, :2] - kps[j, :2]))


def pck(
    predictions: list[np.ndarray],
    ground_truths: list[np.ndarray],
    visibilities: list[np.ndarray],
    torso_sizes: list[float],
    t: float = 0.1,
) -> float:
    """Keypoint recall at `t` times the per-instance torso size.

    A visible keypoint counts as correct when its euclidean error is less
    than or equal to t * torso. Instances with non-positive torso size are
    skipped with a warning.
    """
    if not (len(predictions) == len(ground_truths) == len(visibilities) == len(torso_sizes)):
        raise ValueError("pck inputs must be aligned per instance")
    correct = 0
    total = 0
    skipped = 0
    for pred, gt, vis, torso in zip(predictions, ground_truths, visibilities, torso_sizes):
        if torso <= 0.0:
            skipped += 1
            continue
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        vis = np.asarray(vis) > 0
        if pred.shape != gt.shape or len(vis) != len(gt):
            raise ValueError("pck instance arrays must be aligned")
        d = np.linalg.norm(pred[vis] - gt[vis], axis=1)
        correct += int(np.count_nonzero(d <= t * torso))
        total += int(np.count_nonzero(vis))
    if skipped:
        log.warning("pck: skipped %d instance(s) with non-positive torso size", skipped)
    if total == 0:
        raise ValueError("pck has no visible keypoints to evaluate")
    return correct / total


def oks(
    prediction: np.ndarray,
    ground_truth: np.ndarray,
    visibility: np.ndarray,
    object_scale: float,
    constants: np.ndarray,
) -> float | None:
    """Object keypoint similarity over the visible fixed keypoints.

    Per keypoint: exp(-d^2 / (2 s^2 k^2)), averaged over keypoints with
    visibility > 0. Returns None when nothing is visible. Arbitrary limb
    keypoints have no defined constants and must not be passed here.
    """
    pred = np.asarray(prediction, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    vis = np.asarray(visibility) > 0
    k = np.asarray(constants, dtype=np.float64)
    if not (pred.shape == gt.shape and len(k) == len(gt) == len(vis)):
        raise ValueError("oks inputs must be aligned")
    if object_scale <= 0.0:
        raise ValueError(f"object scale must be positive, got {object_scale}")
    if not vis.any():
        return None
    d2 = np.sum((pred[vis] - gt[vis]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * object_scale**2 * k[vis] ** 2))))


@dataclass(frozen=True)
class ApArResult:
    ap: float
    ar: float
    ap50: float
    ap75: float
    per_threshold: dict[float, float]


def ap_ar(oks_values: list[float], thresholds=DEFAULT_OKS_THRESHOLDS) -> ApArResult:
    """Threshold-swept pass rates over ground-truth-matched instances.

    With one prediction per ground-truth instance, precision and recall
    coincide: the fraction of instances whose OKS clears each threshold.
    """
    vals = np.asarray([v for v in oks_values if v is not None], dtype=np.float64)
    if len(vals) == 0:
        raise ValueError("ap_ar needs at least one OKS value")
    per = {float(t): float(np.mean(vals >= t)) for t in thresholds}
    mean = float(np.mean(list(per.values())))
    return ApArResult(
        ap=mean,
        ar=mean,
        ap50=per.get(0.5, float(np.mean(vals >= 0.5))),
        ap75=per.get(0.75, float(np.mean(vals >= 0.75))),
        per_threshold=per,
    )


# ---------------------------------------------------------------------------
# aggregate evaluation


@dataclass
class InstancePrediction:
    """Model outputs for one instance: fixed-keypoint locations aligned with
    the skeleton, plus (spec, point) pairs for the requested limb keypoints."""

    fixed_points: np.ndarray
    arbitrary: list[tuple[LimbKeypointSpec, np.ndarray]] = field(default_factory=list)


@dataclass
class EvalConfig:
    skeleton: Skeleton
    pck_threshold: float = 0.1
    pct_thresholds: tuple[float, ...] = (0.2,)
    oks_thresholds: tuple[float, ...] = DEFAULT_OKS_THRESHOLDS
    oks_constants: tuple[float, ...] | None = None  # falls back to the skeleton's

    def resolved_oks_constants(self) -> np.ndarray | None:
        k = self.oks_constants or self.skeleton.oks_constants
        return None if k is None else np.asarray(k, dtype=np.float64)


@dataclass
class EvalReport:
    """Aggregated metric results plus bookkeeping counts."""

    mte: float
    pct_at: dict[float, float]
    pck_fixed: float
    pck_full: float
    oks_per_instance: list[float]
    ap: float
    ar: float
    ap50: float
    ap75: float
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "mte": self.mte,
            "pct_at": {str(k): v for k, v in self.pct_at.items()},
            "pck_fixed": self.pck_fixed,
            "pck_full": self.pck_full,
            "oks_per_instance": self.oks_per_instance,
            "ap": self.ap,
            "ar": self.ar,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "counts": self.counts,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            mte=d["mte"],
            pct_at={float(k): v for k, v in d["pct_at"].items()},
            pck_fixed=d["pck_fixed"],
            pck_full=d["pck_full"],
            oks_per_instance=list(d["oks_per_instance"]),
            ap=d["ap"],
            ar=d["ar"],
            ap50=d["ap50"],
            ap75=d["ap75"],
            counts={k: int(v) for k, v in d["counts"].items()},
        )

    @staticmethod
    def from_json(s: str) -> "EvalReport":
        return EvalReport.from_dict(json.loads(s))

    def to_text(self) -> str:
        """Aligned table mirroring the usual results layout."""
        pct_cols = {f"PCT@{t:g}": v for t, v in sorted(self.pct_at.items())}
        cols = {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AR": self.ar,
            "Avg PCK": self.pck_fixed,
            "Full PCK": self.pck_full,
            "MTE": self.mte,
            **pct_cols,
        }
        header = "  ".join(f"{name:>8s}" for name in cols)
        values = "  ".join(f"{v:8.4f}" for v in cols.values())
        return header + "\n" + values


def evaluate(instances, predictions: list[InstancePrediction], config: EvalConfig) -> EvalReport:
    """Score predictions against their instances.

    Fixed keypoints feed PCK and OKS; requested limb keypoints feed the
    thickness metrics and the full PCK. The ground truth for each requested
    spec is realized on the instance's mask, so predictions must be aligned
    with the instances and their spec lists.
    """
    if len(instances) == 0:
        raise ValueError("cannot evaluate an empty instance list")
    if len(instances) != len(predictions):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(instances)} instances"
        )
    skel = config.skeleton
    kconst = config.resolved_oks_constants()

    terrors: list[ThicknessError] = []
    fixed_pred, fixed_gt, fixed_vis, torsos = [], [], [], []
    full_pred, full_gt, full_vis = [], [], []
    oks_values: list[float] = []
    counts = {
        "instances": len(instances),
        "fixed_visible": 0,
        "arbitrary": 0,
        "unresolvable": 0,
        "pck_skipped_torso": 0,
        "oks_skipped": 0,
    }

    for inst, pred in zip(instances, predictions):
        gt_kps = np.asarray(inst.keypoints, dtype=np.float64)
        pred_fixed = np.asarray(pred.fixed_points, dtype=np.float64)
        if pred_fixed.shape != (skel.n_keypoints, 2):
            raise ValueError("fixed_points must be (n_keypoints, 2)")
        vis = gt_kps[:, 2] > 0
        torso = torso_size(gt_kps, skel)
        if torso <= 0.0:
            counts["pck_skipped_torso"] += 1
        counts["fixed_visible"] += int(np.count_nonzero(vis))

        fixed_pred.append(pred_fixed)
        fixed_gt.append(gt_kps[:, :2])
        fixed_vis.append(vis)
        torsos.append(torso)

        arb_pred_pts, arb_gt_pts = [], []
        for spec, point in pred.arbitrary:
            mask = inst.mask_for(spec.limb)
            if mask is None:
                raise ValueError(f"instance {inst.instance_id} has no {spec.limb.value} mask")
            gt_point = realize_keypoint(mask, spec)
            terr = thickness_error(mask, spec, point)
            terrors.append(terr)
            if terr.side is PredictionSide.UNRESOLVABLE:
                counts["unresolvable"] += 1
            arb_pred_pts.append(np.asarray(point, dtype=np.float64))
            arb_gt_pts.append(gt_point)
        counts["arbitrary"] += len(pred.arbitrary)

        n_arb = len(arb_pred_pts)
        full_pred.append(np.vstack([pred_fixed] + arb_pred_pts).reshape(-1, 2))
        full_gt.append(np.vstack([gt_kps[:, :2]] + arb_gt_pts).reshape(-1, 2))
        full_vis.append(np.concatenate([vis, np.ones(n_arb, dtype=bool)]))

        if kconst is not None:
            x, y, w, h = inst.bbox
            scale = float(np.sqrt(max(w * h, 1e-12)))
            val = oks(pred_fixed, gt_kps[:, :2], vis, scale, kconst)
            if val is None:
                counts["oks_skipped"] += 1
            else:
                oks_values.append(val)

    pck_fixed = pck(fixed_pred, fixed_gt, fixed_vis, torsos, config.pck_threshold)
    pck_full = pck(full_pred, full_gt, full_vis, torsos, config.pck_threshold)
    if terrors:
        mte_val = mte(terrors)
        pct_at = {t: pct(terrors, t) for t in config.pct_thresholds}
    else:
        mte_val = 0.0
        pct_at = {t: 1.0 for t in config.pct_thresholds}
    if oks_values:
        ap_res = ap_ar(oks_values, config.oks_thresholds)
        ap, ar, ap50, ap75 = ap_res.ap, ap_res.ar, ap_res.ap50, ap_res.ap75
    else:
        ap = ar = ap50 = ap75 = float("nan")
    return EvalReport(
        mte=mte_val,
        pct_at=pct_at,
        pck_fixed=pck_fixed,
        pck_full=pck_full,
        oks_per_instance=oks_values,
        ap=ap,
        ar=ar,
        ap50=ap50,
        ap75=ap75,
        counts=counts,
    )
