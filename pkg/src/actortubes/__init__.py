"""Weakly-supervised spatiotemporal action tubes: proposal linking, top-k
actor-attention classification, and Recall/mAP evaluation."""

from .errors import FormatError, TrackingError, ValidationError
from .geometry import Box, Tube, box_iou, clamp_box, tube_iou
from .ingest import (
    DetectionSet,
    FeatureTensor,
    GroundTruth,
    GroundTruthInstance,
    Manifest,
    ManifestEntry,
    VideoFrames,
    load_detections,
    load_ground_truth,
    load_manifest,
    load_tensor,
    save_detections,
    save_ground_truth,
    save_manifest,
    save_tensor,
)
from .linking import (
    LinkingConfig,
    ProposalSet,
    filter_detections,
    generate_actor_proposals,
    load_proposals,
    save_proposals,
    select_top_detection,
)
from .tracking import AppearanceTemplate, TrackerConfig, extract_template, match, track
from .viterbi import ViterbiConfig, extract_k_tubes, viterbi_link
from .attention import (
    AttentionConfig,
    ClassifierParams,
    NormalizationSpec,
    SamplingGrid,
    TrainConfig,
    TrainVideo,
    actor_of_interest_pool,
    backward,
    build_grid,
    classify,
    rank_proposals,
    sgd_step,
    softmax_cross_entropy,
    topk_aggregate,
    train,
)
from .evaluate import (
    APReport,
    RecallReport,
    average_precision,
    mean_average_precision,
    recall_at,
    recall_curve,
)
from .synth import SynthConfig, SynthVideo, deformation_benchmark, generate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
