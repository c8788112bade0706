"""Segment-based pose-graph and bundle-adjustment optimisation."""

from .errors import (
    AlignmentError,
    AnchoringError,
    BranchAmbiguityError,
    ConnectingGapError,
    GenerationError,
    InvalidArgument,
    NumericalFailure,
    ParseError,
    RankDeficiencyError,
    ReductionError,
    SegoptError,
)
from .geometry import Pose, Rotation, SimPose
from .graph import BaProblem, Camera, EdgeKind, Frame, PoseEdge, PoseGraph
from .pipeline import METHODS, RunReport, run_method
from .segmentation import SegmentationParams, SegmentationResult, segment_trajectory
from .solver import SolverConfig, optimize_ba, optimize_pose_graph
from .synth import WorldConfig, generate

__version__ = "0.1.0"
