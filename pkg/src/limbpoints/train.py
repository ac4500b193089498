"""Training loop, optimizer, and checkpointing.

Per training sample, arbitrary limb keypoints are drawn on the instance's
masks, joined with the visible fixed keypoints, and the union is randomly
subsampled and permuted before token embedding; targets are rendered
Gaussians. One Adam step per batch. All randomness flows through a single
generator whose state is checkpointed, so a run is fully determined by
(seed, data, config) and resuming continues the exact trajectory.

Checkpoints are a custom binary container (JSON header + raw arrays) written
deterministically: equal runs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .data import PoseInstance
from .geometry import GenerationFailedError, sample_keypoint
from .heatmap import render_gaussian
from .model import KeypointModel, ModelConfig, heatmap_mse, init_parameters
from .autodiff import Tensor
from .representation import NormPoseTemplate
from .skeleton import Skeleton, get_skeleton

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainStepResult",
    "NumericFailure",
    "train_step",
    "train_loop",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"LPCK"
_VERSION = 1
_HEAD = struct.Struct("<4sHHQ")  # magic, version, reserved, header length


class NumericFailure(Exception):
    """Loss became non-finite; training cannot continue."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k_arbitrary: int = 16  # arbitrary keypoints drawn per sample
    tokens_min: int = 8
    tokens_max: int = 32
    thickness_sigma: float = 1.0
    target_sigma: float = 2.0  # heatmap cells
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        unknown = set(d) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(**d)


@dataclass
class AdamState:
    """First/second moment buffers, keyed like the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_model(model: KeypointModel) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p.data) for k, p in model.params.items()},
            v={k: np.zeros_like(p.data) for k, p in model.params.items()},
        )


@dataclass
class TrainStepResult:
    loss: float
    skipped_samples: int = 0
    failed_draws: int = 0


def _sample_queries(
    inst: PoseInstance,
    model: KeypointModel,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[list, np.ndarray, int]:
    """Union of fixed and freshly sampled keypoints, subsampled and permuted.

    Returns (queries, target points, failed draw count).
    """
    kps = np.asarray(inst.keypoints, dtype=np.float64)
    pool: list = []
    points: list[np.ndarray] = []
    for k in np.flatnonzero(kps[:, 2] > 0):
        pool.append(int(k))
        points.append(kps[k, :2])
    failed = 0
    mask_list = list(inst.masks.values())
    if mask_list:
        for _ in range(cfg.k_arbitrary):
            mask = mask_list[int(rng.integers(len(mask_list)))]
            try:
                spec, point = sample_keypoint(mask, rng, cfg.thickness_sigma)
            except GenerationFailedError:
                failed += 1
                continue
            pool.append(spec)
            points.append(point)
    if not pool:
        return [], np.zeros((0, 2)), failed
    hi = min(cfg.tokens_max, len(pool))
    lo = min(cfg.tokens_min, hi)
    k = int(rng.integers(lo, hi + 1))
    order = rng.permutation(len(pool))[:k]
    return [pool[i] for i in order], np.asarray([points[i] for i in order]), failed


def train_step(
    model: KeypointModel,
    batch: list[PoseInstance],
    state: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainStepResult:
    """One gradient step on a batch of instances."""
    mcfg = model.config
    losses = []
    skipped = 0
    failed = 0
    for inst in batch:
        queries, targets, f = _sample_queries(inst, model, cfg, rng)
        failed += f
        if not queries:
            skipped += 1
            continue
        hms = []
        visible = np.zeros(len(queries), dtype=bool)
        for i, pt in enumerate(targets):
            hm = render_gaussian(pt, mcfg.heatmap_size, cfg.target_sigma, mcfg.heatmap_stride)
            hms.append(hm.values)
            visible[i] = not hm.out_of_bounds
        pred = model.forward(inst.get_image(), queries)
        losses.append(heatmap_mse(pred, np.stack(hms), visible))
    if not losses:
        return TrainStepResult(loss=float("nan"), skipped_samples=skipped, failed_draws=failed)
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    total = total * (1.0 / len(losses))
    loss_value = float(total.data)
    if not np.isfinite(loss_value):
        raise NumericFailure(f"non-finite loss {loss_value}")

    for p in model.params.values():
        p.grad = None
    total.backward()
    _adam_update(model.params, state, cfg)
    return TrainStepResult(loss=loss_value, skipped_samples=skipped, failed_draws=failed)


def _adam_update(params: dict[str, Tensor], state: AdamState, cfg: TrainConfig) -> None:
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


def train_loop(
    model: KeypointModel,
    instances: list[PoseInstance],
    cfg: TrainConfig,
    state: AdamState | None = None,
    rng: np.random.Generator | None = None,
    start_step: int = 0,
    on_step=None,
) -> tuple[AdamState, np.random.Generator, int]:
    """Run (steps - start_step) training steps; `on_step(step, result)` hooks
    logging/validation. Returns the final optimizer state, rng, and step."""
    if not instances:
        raise ValueError("cannot train on an empty instance list")
    if state is None:
        state = AdamState.for_model(model)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    step = start_step
    while step < cfg.steps:
        idx = rng.integers(len(instances), size=cfg.batch_size)
        result = train_step(model, [instances[i] for i in idx], state, cfg, rng)
        step += 1
        if on_step is not None:
            on_step(step, result)
    return state, rng, step


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path,
    model: KeypointModel,
    state: AdamState | None = None,
    step: int = 0,
    rng: np.random.Generator | None = None,
    train_config: TrainConfig | None = None,
) -> None:
    """Deterministic binary container: config echo + named flat arrays."""
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        arrays[f"param.{name}"] = p.data
    if state is not None:
        for name, a in state.m.items():
            arrays[f"adam.m.{name}"] = a
        for name, a in state.v.items():
            arrays[f"adam.v.{name}"] = a
    entries = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        entries.append(
            {"name": name, "dtype": str(a.dtype), "shape": list(a.shape), "offset": offset}
        )
        offset += a.nbytes
    header = {
        "model_config": model.config.to_dict(),
        "template": model.template.to_dict() if model.template is not None else None,
        "train_config": train_config.to_dict() if train_config is not None else None,
        "step": step,
        "adam_t": state.t if state is not None else 0,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(_MAGIC, _VERSION, 0, len(blob)))
        fh.write(blob)
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name]).tobytes())


def load_checkpoint(
    path, skeleton: Skeleton | None = None
) -> tuple[KeypointModel, AdamState, int, np.random.Generator | None, TrainConfig | None]:
    with open(path, "rb") as fh:
        magic, version, _, hlen = _HEAD.unpack(fh.read(_HEAD.size))
        if magic != _MAGIC or version != _VERSION:
            raise ValueError(f"{path}: not a recognized checkpoint")
        header = json.loads(fh.read(hlen))
        payload = fh.read()
    config = ModelConfig.from_dict(header["model_config"])
    skel = skeleton or get_skeleton(config.skeleton)
    template = (
        NormPoseTemplate.from_dict(header["template"], skel)
        if header.get("template")
        else None
    )
    arrays: dict[str, np.ndarray] = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        a = np.frombuffer(payload, dtype=dt, count=count, offset=ent["offset"])
        arrays[ent["name"]] = a.reshape(ent["shape"]).copy()
    params = {
        name[len("param.") :]: Tensor(a, requires_grad=True)
        for name, a in arrays.items()
        if name.startswith("param.")
    }
    model = KeypointModel(config, params=params, skeleton=skel, template=template)
    state = AdamState(
        m={n[len("adam.m.") :]: a for n, a in arrays.items() if n.startswith("adam.m.")},
        v={n[len("adam.v.") :]: a for n, a in arrays.items() if n.startswith("adam.v.")},
        t=int(header.get("adam_t", 0)),
    )
    if not state.m:
        state = AdamState.for_model(model)
    rng = None
    if header.get("rng_state") is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = header["rng_state"]
    tcfg = TrainConfig.from_dict(header["train_config"]) if header.get("train_config") else None
    return model, state, int(header["step"]), rng, tcfg
