"""Freely selected keypoints on human limbs.

Generation of ground-truth keypoints from body-part masks, two token
representations for querying arbitrary limb points, a toy transformer
exercising the token mechanism, and thickness-aware evaluation metrics
alongside PCK/OKS.
"""

from .geometry import (
    BodyPartMask,
    CrossSection,
    GenerationFailedError,
    Limb,
    LimbKeypointSpec,
    NoSectionError,
    PredictionClassification,
    PredictionSide,
    classify_prediction,
    cross_section,
    point_in_mask,
    project_point,
    rasterize_polygon,
    realize_keypoint,
    sample_keypoint,
)
from .skeleton import COCO17, JUMP20, Skeleton, get_skeleton, load_skeleton
from .representation import (
    NormPoseTemplate,
    NotOnLimbError,
    decode_norm_pose,
    decode_vectorized,
    default_norm_pose_template,
    encode_fixed_keypoint,
    encode_norm_pose,
    encode_vectorized,
    load_norm_pose_template,
)
from .metrics import (
    EvalConfig,
    EvalReport,
    InstancePrediction,
    ThicknessError,
    ap_ar,
    evaluate,
    mte,
    oks,
    pck,
    pct,
    thickness_error,
    torso_size,
)
from .heatmap import (
    DecodedPoint,
    Heatmap,
    decode_argmax,
    decode_dark,
    heatmap_from_bytes,
    heatmap_to_bytes,
    render_gaussian,
)
from .model import (
    EmbedderKind,
    KeypointModel,
    ModelConfig,
    gradient_check,
    heatmap_mse,
    positional_encoding_table,
)
from .data import (
    CapsuleSpec,
    PoseInstance,
    SyntheticBodySpec,
    capsule_polygon,
    generate_synthetic,
    load_dataset,
    make_eval_grid,
    random_body_spec,
    rle_decode,
    rle_encode,
    save_dataset,
    split,
)
from .train import (
    AdamState,
    NumericFailure,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_loop,
    train_step,
)

__version__ = "0.1.0"
