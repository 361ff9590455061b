"""Multi-view reference conditioning lab.

A desk-scale implementation of multi-view identity conditioning for a
toy video flow model: positional-coordinate schemes for reference
tokens, region/view masking, consistency metrics, facial-trajectory
analytics and the large-angle dataset pipeline.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, load_tensor, save_tensor
from .rope import RopeConfig, RopeCoordinate, SequenceLayout, assign_coordinates
from .masking import (
    PoseAngles,
    RegionMask,
    ViewAttentionMask,
    apply_region_mask,
    build_view_attention_mask,
    generate_region_mask,
    match_reference_view,
    pose_anchor_frame,
)
from .model import LatentVideo, ModelConfig, MvDit, ReferenceLatent, TokenSequence, concat_sequence
from .flow import FlowSample, TrainConfig, euler_integrate, flow_loss, make_flow_sample, sample, train
from .metrics import (
    ConcentrationSeries,
    FaceEmbedding,
    ReferenceSet,
    attention_concentration,
    cosine,
    mvrc_frame,
    mvrc_video,
)
from .trajectory import (
    TrajectoryPoint,
    TrajectoryStats,
    build_trajectory,
    pose_to_direction,
    render_trajectory_svg,
    trajectory_stats,
)
from .datapipe import ClipRecord, PipelineConfig, PipelineReport, run_pipeline
