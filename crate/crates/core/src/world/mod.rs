//! Deterministic planar world: kinematics, wall, communication graphs and
//! scenarios.

pub mod config;
pub mod dynamics;
pub mod graph;
pub mod scenario;

pub use config::{Bounds, CommConfig, CommRule, Thresholds, Wall, WorldConfig};
pub use dynamics::{
    check_termination, detect_agent_collisions, hits_geometry, resolve_wall_collision, step_dynamics,
    AgentKinematics, EpisodeStatus,
};
pub use graph::{compute_neighborhood, Edge, NeighborhoodGraph};
pub use scenario::{spawn_scenario, ScenarioSpec};
