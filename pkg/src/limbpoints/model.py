"""Toy-scale transformer over visual and keypoint tokens.

Images are split into pixel patches and linearly embedded to visual tokens;
requested keypoints are embedded to keypoint tokens by one of four embedders
and appended to the sequence. Keypoint tokens carry no positional encoding,
so their order is immaterial; a 2-D sine encoding is re-added to the visual
rows before every encoder layer. A small MLP head turns each keypoint-token
output into a heatmap.

Embedder variants:

* vectorized: keypoint and thickness vectors each embed to half-width tokens
  that are concatenated (the representation that carries side information
  end to end);
* thickness-baseline: keypoint and thickness vectors embed to two separate
  full-width tokens per keypoint, with supervision read from the
  keypoint-vector token only (the pairing-free variant that collapses onto
  the bone line);
* normpose-linear / normpose-mlp: template coordinates embedded by a single
  affine map or a four-layer MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, gelu, layer_norm, softmax
from .geometry import LimbKeypointSpec
from .heatmap import DecodedPoint, Heatmap, decode_dark
from .representation import (
    NormPoseTemplate,
    default_norm_pose_template,
    encode_fixed_keypoint,
    encode_norm_pose,
    encode_vectorized,
    norm_pose_fixed_keypoint,
)
from .skeleton import Skeleton, get_skeleton

__all__ = [
    "EmbedderKind",
    "ModelConfig",
    "KeypointModel",
    "Query",
    "init_parameters",
    "positional_encoding_table",
    "heatmap_mse",
    "gradient_check",
]

# A query is either a fixed-keypoint index or an arbitrary limb spec.
Query = "int | LimbKeypointSpec"


class EmbedderKind(str, Enum):
    VECTORIZED_CONCAT = "vectorized"
    THICKNESS_TOKEN_BASELINE = "thickness-baseline"
    NORM_POSE_LINEAR = "normpose-linear"
    NORM_POSE_MLP = "normpose-mlp"

    @property
    def uses_norm_pose(self) -> bool:
        return self in (EmbedderKind.NORM_POSE_LINEAR, EmbedderKind.NORM_POSE_MLP)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. The defaults are the desk-scale setup:
    64x48 grayscale inputs, 8x8 pixel patches, width 32, 2 layers."""

    image_size: tuple[int, int] = (64, 48)  # (H, W)
    channels: int = 1
    patch_size: tuple[int, int] = (8, 8)
    embed_dim: int = 32
    layers: int = 2
    heads: int = 2
    mlp_ratio: float = 4.0
    head_hidden: int = 128
    heatmap_size: tuple[int, int] = (16, 12)
    embedder: EmbedderKind = EmbedderKind.VECTORIZED_CONCAT
    skeleton: str = "coco17"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        h, w = self.image_size
        ph, pw = self.patch_size
        if self.embed_dim % 4 != 0:
            raise ValueError("embed_dim must be divisible by 4 (half-width split + 2-D encoding)")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by the head count")
        if h % ph != 0 or w % pw != 0:
            raise ValueError(f"patches {self.patch_size} do not tile image {self.image_size}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        object.__setattr__(self, "embedder", EmbedderKind(self.embedder))

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch_size[0], self.image_size[1] // self.patch_size[1]

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid_size
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size[0] * self.patch_size[1] * self.channels

    @property
    def heatmap_stride(self) -> tuple[float, float]:
        return (
            self.image_size[0] / self.heatmap_size[0],
            self.image_size[1] / self.heatmap_size[1],
        )

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "channels": self.channels,
            "patch_size": list(self.patch_size),
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "head_hidden": self.head_hidden,
            "heatmap_size": list(self.heatmap_size),
            "embedder": self.embedder.value,
            "skeleton": self.skeleton,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("image_size", "patch_size", "heatmap_size"):
            if key in d:
                d[key] = tuple(d[key])
        known = set(ModelConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return ModelConfig(**d)


def positional_encoding_table(grid_size: tuple[int, int], dim: int) -> np.ndarray:
    """Fixed 2-D sine/cosine table, one row per patch in row-major grid order.

    The first half of the channels encodes the grid row, the second half the
    grid column; each half is split into sine then cosine banks, so position
    zero reads (0, ..., 1, ...) per bank.
    """
    if dim % 4 != 0:
        raise ValueError("encoding dim must be divisible by 4")
    gh, gw = grid_size
    half = dim // 2

    def axis_table(n: int) -> np.ndarray:
        k = np.arange(half // 2)
        omega = 1.0 / (10000.0 ** (2.0 * k / half))
        args = np.arange(n)[:, None] * omega[None, :]
        return np.concatenate([np.sin(args), np.cos(args)], axis=1)

    rows = axis_table(gh)
    cols = axis_table(gw)
    table = np.zeros((gh, gw, dim))
    table[:, :, :half] = rows[:, None, :]
    table[:, :, half:] = cols[None, :, :]
    return table.reshape(gh * gw, dim)


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_parameters(config: ModelConfig, skeleton: Skeleton) -> dict[str, Tensor]:
    """Deterministic scaled-uniform initialization from the config seed."""
    rng = np.random.default_rng(config.seed)
    m = config.embed_dim
    n = skeleton.n_keypoints
    shapes: list[tuple[str, tuple[int, ...], int | None]] = [
        ("patch.w", (config.patch_dim, m), config.patch_dim),
        ("patch.b", (m,), None),
    ]
    kind = config.embedder
    if kind is EmbedderKind.VECTORIZED_CONCAT:
        half = m // 2
        shapes += [
            ("kp_embed.w", (n, half), n),
            ("kp_embed.b", (half,), None),
            ("th_embed.w", (3, half), 3),
            ("th_embed.b", (half,), None),
        ]
    elif kind is EmbedderKind.THICKNESS_TOKEN_BASELINE:
        shapes += [
            ("kp_embed.w", (n, m), n),
            ("kp_embed.b", (m,), None),
            ("th_embed.w", (3, m), 3),
            ("th_embed.b", (m,), None),
        ]
    elif kind is EmbedderKind.NORM_POSE_LINEAR:
        shapes += [("np_embed.0.w", (2, m), 2), ("np_embed.0.b", (m,), None)]
    else:  # four-layer MLP
        dims = [2, m, m, m, m]
        for i in range(4):
            shapes += [
                (f"np_embed.{i}.w", (dims[i], dims[i + 1]), dims[i]),
                (f"np_embed.{i}.b", (dims[i + 1],), None),
            ]
    f = config.mlp_hidden
    for i in range(config.layers):
        shapes += [
            (f"layer{i}.ln1.g", (m,), "ones"),
            (f"layer{i}.ln1.b", (m,), None),
            (f"layer{i}.attn.wq", (m, m), m),
            (f"layer{i}.attn.bq", (m,), None),
            (f"layer{i}.attn.wk", (m, m), m),
            (f"layer{i}.attn.bk", (m,), None),
            (f"layer{i}.attn.wv", (m, m), m),
            (f"layer{i}.attn.bv", (m,), None),
            (f"layer{i}.attn.wo", (m, m), m),
            (f"layer{i}.attn.bo", (m,), None),
            (f"layer{i}.ln2.g", (m,), "ones"),
            (f"layer{i}.ln2.b", (m,), None),
            (f"layer{i}.mlp.w1", (m, f), m),
            (f"layer{i}.mlp.b1", (f,), None),
            (f"layer{i}.mlp.w2", (f, m), f),
            (f"layer{i}.mlp.b2", (m,), None),
        ]
    hh, hw_ = config.heatmap_size
    shapes += [
        ("final_ln.g", (m,), "ones"),
        ("final_ln.b", (m,), None),
        ("head.w1", (m, config.head_hidden), m),
        ("head.b1", (config.head_hidden,), None),
        ("head.w2", (config.head_hidden, hh * hw_), config.head_hidden),
        ("head.b2", (hh * hw_,), None),
    ]
    params: dict[str, Tensor] = {}
    dtype = config.np_dtype
    for name, shape, fan in shapes:
        if fan == "ones":
            data = np.ones(shape)
        elif fan is None:
            data = np.zeros(shape)
        else:
            data = _uniform(rng, shape, fan)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# building blocks


def embed_patches(image: np.ndarray, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Flatten each pixel patch and project it to a visual token."""
    img = np.asarray(image, dtype=config.np_dtype)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = config.image_size
    if img.shape != (h, w, config.channels):
        raise ValueError(f"image shape {img.shape} does not match config {(h, w, config.channels)}")
    ph, pw = config.patch_size
    gh, gw = config.grid_size
    patches = (
        img.reshape(gh, ph, gw, pw, config.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, config.patch_dim)
    )
    return Tensor(patches) @ params["patch.w"] + params["patch.b"]


def embed_keypoints_vectorized(
    kv: np.ndarray, tv: np.ndarray, params: dict[str, Tensor]
) -> Tensor:
    """Half-width embeddings of the keypoint and thickness vectors, concatenated."""
    a = Tensor(kv) @ params["kp_embed.w"] + params["kp_embed.b"]
    b = Tensor(tv) @ params["th_embed.w"] + params["th_embed.b"]
    return concat([a, b], axis=1)


def embed_keypoints_thickness_baseline(
    kv: np.ndarray, tv: np.ndarray, params: dict[str, Tensor]
) -> Tensor:
    """Two full-width tokens per keypoint, interleaved (kv token first)."""
    a = Tensor(kv) @ params["kp_embed.w"] + params["kp_embed.b"]
    b = Tensor(tv) @ params["th_embed.w"] + params["th_embed.b"]
    k, m = a.shape
    return concat([a.reshape(k, 1, m), b.reshape(k, 1, m)], axis=1).reshape(2 * k, m)


def embed_keypoints_norm_pose(
    coords: np.ndarray, params: dict[str, Tensor], kind: EmbedderKind
) -> Tensor:
    """Template coordinates to tokens, by affine map or four-layer MLP."""
    x = Tensor(coords)
    if kind is EmbedderKind.NORM_POSE_LINEAR:
        return x @ params["np_embed.0.w"] + params["np_embed.0.b"]
    if kind is not EmbedderKind.NORM_POSE_MLP:
        raise ValueError(f"not a norm-pose embedder: {kind}")
    for i in range(4):
        x = x @ params[f"np_embed.{i}.w"] + params[f"np_embed.{i}.b"]
        if i < 3:
            x = gelu(x)
    return x


def _attention(x: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    t, m = x.shape
    dh = m // heads
    q = x @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"]
    k = x @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"]
    v = x @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"]
    q = q.reshape(t, heads, dh).transpose(1, 0, 2)
    k = k.reshape(t, heads, dh).transpose(1, 0, 2)
    v = v.reshape(t, heads, dh).transpose(1, 0, 2)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
    att = softmax(scores)
    out = (att @ v).transpose(1, 0, 2).reshape(t, m)
    return out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]


def heatmap_mse(pred: Tensor, targets: np.ndarray, visible: np.ndarray) -> Tensor:
    """Per-cell squared error averaged over cells and visible keypoints."""
    targets = np.asarray(targets, dtype=pred.data.dtype)
    if pred.shape != targets.shape:
        raise ValueError(f"prediction {pred.shape} vs target {targets.shape} shape mismatch")
    vis = np.flatnonzero(np.asarray(visible))
    if len(vis) == 0:
        return Tensor(np.zeros((), dtype=pred.data.dtype))
    diff = pred[vis] - Tensor(targets[vis])
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# the model


class KeypointModel:
    """Bundles config, skeleton, optional norm-pose template, and parameters."""

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, Tensor] | None = None,
        skeleton: Skeleton | None = None,
        template: NormPoseTemplate | None = None,
    ):
        self.config = config
        self.skeleton = skeleton if skeleton is not None else get_skeleton(config.skeleton)
        if template is None and config.embedder.uses_norm_pose:
            template = default_norm_pose_template(self.skeleton)
        self.template = template
        self.params = params if params is not None else init_parameters(config, self.skeleton)
        self._pos = positional_encoding_table(config.grid_size, config.embed_dim).astype(
            config.np_dtype
        )

    # -- query encoding ------------------------------------------------------

    def encode_queries(self, queries: list) -> tuple[np.ndarray, ...]:
        """Stack per-query input vectors for the configured embedder."""
        dtype = self.config.np_dtype
        if self.config.embedder.uses_norm_pose:
            coords = [
                norm_pose_fixed_keypoint(q, self.template)
                if isinstance(q, (int, np.integer))
                else encode_norm_pose(q, self.template)
                for q in queries
            ]
            c = np.asarray(coords, dtype=dtype).reshape(len(queries), 2)
            return (c,)
        pairs = [
            encode_fixed_keypoint(q, self.skeleton)
            if isinstance(q, (int, np.integer))
            else encode_vectorized(q, self.skeleton)
            for q in queries
        ]
        kv = np.asarray([p[0] for p in pairs], dtype=dtype).reshape(
            len(queries), self.skeleton.n_keypoints
        )
        tv = np.asarray([p[1] for p in pairs], dtype=dtype).reshape(len(queries), 3)
        return kv, tv

    def embed_queries(self, queries: list) -> Tensor:
        kind = self.config.embedder
        encoded = self.encode_queries(queries)
        if kind is EmbedderKind.VECTORIZED_CONCAT:
            return embed_keypoints_vectorized(*encoded, self.params)
        if kind is EmbedderKind.THICKNESS_TOKEN_BASELINE:
            return embed_keypoints_thickness_baseline(*encoded, self.params)
        return embed_keypoints_norm_pose(encoded[0], self.params, kind)

    # -- forward -------------------------------------------------------------

    def forward(self, image: np.ndarray, queries: list) -> Tensor:
        """Heatmaps for the requested keypoints, shape (K, hm_h, hm_w).

        Accepts any K >= 0; visual-token outputs are discarded by the head.
        """
        cfg = self.config
        n_visual = cfg.n_patches
        x = embed_patches(image, self.params, cfg)
        n_kp_tokens = 0
        if queries:
            kp = self.embed_queries(queries)
            n_kp_tokens = kp.shape[0]
            x = concat([x, kp], axis=0)
        pos = np.zeros((n_visual + n_kp_tokens, cfg.embed_dim), dtype=cfg.np_dtype)
        pos[:n_visual] = self._pos
        pos = Tensor(pos)
        for i in range(cfg.layers):
            x = x + pos  # visual rows only; keypoint rows get zeros
            x = x + _attention(
                layer_norm(x, self.params[f"layer{i}.ln1.g"], self.params[f"layer{i}.ln1.b"]),
                self.params,
                f"layer{i}.attn",
                cfg.heads,
            )
            h = layer_norm(x, self.params[f"layer{i}.ln2.g"], self.params[f"layer{i}.ln2.b"])
            h = gelu(h @ self.params[f"layer{i}.mlp.w1"] + self.params[f"layer{i}.mlp.b1"])
            x = x + (h @ self.params[f"layer{i}.mlp.w2"] + self.params[f"layer{i}.mlp.b2"])
        x = layer_norm(x, self.params["final_ln.g"], self.params["final_ln.b"])
        k = len(queries)
        if k == 0:
            hh, hw_ = cfg.heatmap_size
            return Tensor(np.zeros((0, hh, hw_), dtype=cfg.np_dtype))
        if cfg.embedder is EmbedderKind.THICKNESS_TOKEN_BASELINE:
            rows = n_visual + 2 * np.arange(k)  # read the kv token of each pair
        else:
            rows = n_visual + np.arange(k)
        out = x[rows]
        h = gelu(out @ self.params["head.w1"] + self.params["head.b1"])
        h = h @ self.params["head.w2"] + self.params["head.b2"]
        hh, hw_ = cfg.heatmap_size
        return h.reshape(k, hh, hw_)

    def predict(self, image: np.ndarray, queries: list) -> list[DecodedPoint]:
        """Forward plus sub-pixel decoding; confidence is the peak value."""
        maps = self.forward(image, queries).data
        stride = self.config.heatmap_stride
        return [decode_dark(Heatmap(maps[i], stride)) for i in range(maps.shape[0])]

    # -- persistence helpers ---------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def with_dtype(self, dtype: str) -> "KeypointModel":
        """Copy of this model with parameters cast to another precision."""
        cfg = replace(self.config, dtype=dtype)
        params = {
            name: Tensor(t.data.astype(cfg.np_dtype), requires_grad=True)
            for name, t in self.params.items()
        }
        return KeypointModel(cfg, params, self.skeleton, self.template)


def gradient_check(
    model: KeypointModel,
    image: np.ndarray,
    queries: list,
    targets: np.ndarray,
    visible: np.ndarray,
    n_samples: int = 200,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Samples `n_samples` parameter entries across all tensors. The model must
    be in float64; float32 rounding would swamp the comparison.
    """
    if model.config.dtype != "float64":
        raise ValueError("gradient_check requires a float64 model")
    loss = heatmap_mse(model.forward(image, queries), targets, visible)
    for t in model.params.values():
        t.grad = None
    loss.backward()

    rng = np.random.default_rng(seed)
    names = list(model.params)
    sizes = np.array([model.params[n].data.size for n in names])
    probs = sizes / sizes.sum()
    worst = 0.0
    for _ in range(n_samples):
        name = names[int(rng.choice(len(names), p=probs))]
        tensor = model.params[name]
        idx = int(rng.integers(tensor.data.size))
        analytic = tensor.grad.reshape(-1)[idx] if tensor.grad is not None else 0.0

        def loss_at(values: np.ndarray, _name=name) -> float:
            saved = model.params[_name].data
            model.params[_name].data = values
            try:
                out = heatmap_mse(model.forward(image, queries), targets, visible)
            finally:
                model.params[_name].data = saved
            return float(out.data)

        numeric = ad.finite_difference_grad(loss_at, tensor.data, [idx], h=h)[0]
        scale = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
