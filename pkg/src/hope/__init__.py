"""Complexity-routed Grassmannian message passing with episodic memory."""

from .errors import (
    EstimatorError,
    FormatError,
    GraphError,
    HopeError,
    RoutingError,
    ScenarioError,
    SubspaceError,
    TrackingError,
)
from .ghn import (
    AgentState,
    GhnParams,
    Hyperedge,
    HypergraphScene,
    attention_baseline,
    build_hyperedges,
    run_ghn,
    run_mixed_paths,
)
from .grassmann import Subspace, grassmann_distance, principal_angles, qr_retract
from .lid import LidEstimate, PointCloud, VoxelConfig, estimate_lid, two_nn_distances, voxelize
from .memory import FrameObservation, GateParams, LtmState, StmBuffer, TrackerConfig, track_sequence
from .router import PathSpec, RouteDecision, RouterParams, route, soft_weights, soft_weights_gradient
from .scenegen import ScenarioConfig, gen_manifold, gen_scene

__version__ = "0.1.0"
