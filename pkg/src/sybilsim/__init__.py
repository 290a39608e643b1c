"""Deterministic simulator for ghost-rider attacks on crowdsourced map
services and the proximity-graph defense that detects them."""

__version__ = "0.1.0"

from .attacks import SybilPlan, build_attack_graph, build_sybil_region
from .config import ExperimentConfig, trial_rng
from .proximity import (
    ChallengeContext,
    ChallengeMode,
    EncounterModel,
    NodeKind,
    ProximityGraph,
    attempt_collocation,
    challenge_success_prob,
    grow_honest_graph,
    load_graph,
    save_graph,
    seed_trusted,
)
from .query import (
    SearchArea,
    ServerCluster,
    UserRecord,
    appearance_distribution_check,
    expected_unique_users,
)
from .scenarios import SCENARIOS, run_scenario
from .sybilrank import RankedList, TrustVector, auc, fp_fn_at_cutoff, propagate_trust, rank_nodes
from .tracker import BootstrapError, TrackConfig, Tracker, TrackTrace, bootstrap_target
from .traffic import (
    SpeedCohorts,
    TrafficEngine,
    aggregate_speed,
    congestion_threshold,
    maybe_reroute,
    partition_cohorts,
    plan_route,
    update_hotspot,
)
from .world import (
    AgentKind,
    AppState,
    EventType,
    GpsReport,
    MapEvent,
    Position,
    RoadClass,
    RoadNetwork,
    RoadSegment,
    SpeedScript,
    VehicleAgent,
    Vote,
    World,
)
