//! Semantic scene graphs for confined inspection spaces: pattern mining,
//! inexact graph matching, graph-based prediction of unexplored structure,
//! and predictive inspection planning in a deterministic voxel simulator.

pub mod compress;
pub mod error;
pub mod geom;
pub mod matching;
pub mod mining;
pub mod config;
pub mod metrics;
pub mod perception;
pub mod planner;
pub mod predict;
pub mod ssg;
pub mod world;

pub use compress::{compress, Hierarchy, HierarchyLevel, Instance, Substructure};
pub use error::{Error, Result};
pub use geom::{Aabb, Pose, RigidTransform};
pub use matching::{match_cost, pose_cost, transform_cost, Mapping, MatchConfig};
pub use mining::{
    build_hierarchy, discover, evaluate, extend_substruct, CandidateQueue, MiningMode, MiningParams,
};
pub use config::ScenarioConfig;
pub use metrics::{coverage_by_compartment, CompartmentMetrics, MissionMetrics};
pub use perception::DetectionTracker;
pub use planner::{
    run_mission, DetectionParams, GainParams, MissionMode, MissionReport, Mode, PlannerSettings,
    SegmentRecord, Viewpoint,
};
pub use predict::{
    expand_candidate, modify_graph, predict, ModifiedGraph, PredictedVertex, PredictionCandidate,
};
pub use ssg::{description_length, load_graph, save_graph, Edge, SceneGraph, Vertex};
pub use world::{
    generate_tank, CellState, GroundTruthObject, MissingLong, PathPoint, RobotConfiguration,
    SenseEvent, SensorModel, Side, TankSpec, VoxelWorld,
};
