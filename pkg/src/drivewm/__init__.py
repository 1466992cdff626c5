"""Sampling, quantization and trajectory-evaluation primitives for latent driving world models."""

__version__ = "0.1.0"

from .errors import DriveWMError, InputError, PreconditionError
from .trajectory import (
    PlanarPath,
    Pose,
    PoseSequence,
    canonicalize,
    is_turn_event,
    planar_project,
    resample,
    yaw_rate,
)
from .metrics import (
    Metric,
    PrecisionRecall,
    TrajectorySet,
    ade,
    discrete_frechet,
    knn_thresholds,
    pairwise_distances,
    precision_recall,
)
from .quantizer import (
    Codebook,
    CodecMode,
    FactorizedCodec,
    codebook_usage,
    dequantize,
    entropy_penalty,
    hybrid_encode,
    quantize,
    similarity_matrix,
    token_copy_rate,
    vq_losses,
)
from .rollout import (
    ContextWindow,
    MaskState,
    apply_mask,
    context_augment_mgm,
    context_dropout,
    context_noise_fm,
    fm_euler_step,
    fm_interpolate,
    fm_sample_frame,
    mask_ratio,
    mgm_sample_frame,
    mgm_unmask_step,
    rollout,
)
from .losses import LossValue, combined_mgm_loss, fm_loss, kd_soft_target_loss, masked_ce_loss
from .harness import (
    Report,
    WindowMode,
    WindowSpec,
    chunked_windows,
    cumulative_windows,
    evaluate_windows,
    trajectory_report,
)
from .synth import PRESETS, BehaviorKind, BehaviorPreset, gen_set, gen_trajectory
from .io import load_trajectories, load_trajectory, save_trajectory
