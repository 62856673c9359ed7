use serde::{Deserialize, Serialize};

use super::config::{Bounds, WorldConfig};
use crate::geom::{self, Vec2};
use crate::policy::Action;
use crate::{AgentId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentKinematics {
    pub id: AgentId,
    pub p: Vec2,
    /// Measured velocity: how the agent actually moved over the last tick.
    pub v_m: Vec2,
    /// Last desired velocity command.
    pub v_d: Vec2,
    /// Acceleration the integrator applied over the last tick.
    pub a_d: Vec2,
    pub p_g: Vec2,
    pub radius: f64,
}

impl AgentKinematics {
    pub fn at_rest(id: AgentId, p: Vec2, p_g: Vec2, radius: f64) -> Self {
        Self {
            id,
            p,
            v_m: [0.0; 2],
            v_d: [0.0; 2],
            a_d: [0.0; 2],
            p_g,
            radius,
        }
    }

    pub fn goal_distance(&self) -> f64 {
        geom::dist(self.p, self.p_g)
    }
}

/// Acceleration- and speed-limited integration of one tick.
pub fn step_dynamics(s: &AgentKinematics, action: Action, cfg: &WorldConfig) -> Result<AgentKinematics> {
    if !(geom::is_finite(s.p) && geom::is_finite(s.v_m) && geom::is_finite(action.v_d)) {
        return Err(Error::NonFinite("agent state or command"));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::validation("dt must be positive"));
    }
    let dv = geom::clamp_norm(geom::sub(action.v_d, s.v_m), cfg.a_max * cfg.dt);
    let v = geom::clamp_norm(geom::add(s.v_m, dv), cfg.v_max);
    Ok(AgentKinematics {
        p: geom::add(s.p, geom::scale(v, cfg.dt)),
        v_m: v,
        v_d: action.v_d,
        a_d: geom::scale(dv, 1.0 / cfg.dt),
        ..*s
    })
}

/// Whether a disc overlaps an axis-aligned rectangle (touching does not count).
pub fn disc_overlaps_rect(center: Vec2, radius: f64, min: Vec2, max: Vec2) -> bool {
    let cx = center[0].clamp(min[0], max[0]);
    let cy = center[1].clamp(min[1], max[1]);
    geom::dist(center, [cx, cy]) < radius
}

fn outside_bounds(center: Vec2, radius: f64, b: &Bounds) -> bool {
    center[0] - radius < b.min[0]
        || center[0] + radius > b.max[0]
        || center[1] - radius < b.min[1]
        || center[1] + radius > b.max[1]
}

/// Whether an agent disc at `p` intersects the wall or leaves the arena.
pub fn hits_geometry(p: Vec2, radius: f64, cfg: &WorldConfig) -> bool {
    if outside_bounds(p, radius, &cfg.bounds) {
        return true;
    }
    cfg.wall.is_some_and(|wall| {
        wall.segments(&cfg.bounds)
            .iter()
            .any(|(lo, hi)| disc_overlaps_rect(p, radius, *lo, *hi))
    })
}

/// Reverts a step that ended inside the wall: the agent keeps its pre-step
/// position and its measured velocity becomes zero.
pub fn resolve_wall_collision(
    before: &AgentKinematics,
    after: AgentKinematics,
    cfg: &WorldConfig,
) -> (AgentKinematics, bool) {
    if hits_geometry(after.p, after.radius, cfg) {
        (
            AgentKinematics {
                p: before.p,
                v_m: [0.0; 2],
                ..after
            },
            true,
        )
    } else {
        (after, false)
    }
}

/// All unordered pairs closer than `threshold`, ordered by (id, id).
pub fn detect_agent_collisions(states: &[AgentKinematics], threshold: f64) -> Vec<(AgentId, AgentId)> {
    let mut pairs = Vec::new();
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            if geom::dist(a.p, b.p) < threshold {
                pairs.push(if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) });
            }
        }
    }
    pairs.sort();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    AllAtGoal { makespan: f64 },
    TimedOut,
    CollisionFlagged,
}

impl EpisodeStatus {
    pub fn is_done(&self) -> bool {
        !matches!(self, EpisodeStatus::Running)
    }
}

/// Episode state after a tick at episode time `t`. A latched collision turns
/// whatever ending the episode reaches into `CollisionFlagged`.
pub fn check_termination(
    states: &[AgentKinematics],
    cfg: &WorldConfig,
    t: f64,
    collision_latched: bool,
) -> EpisodeStatus {
    let all_home = states
        .iter()
        .all(|s| s.goal_distance() <= cfg.thresholds.goal);
    // Half a tick of slack so accumulated tick times still hit the timeout.
    let timed_out = t >= cfg.timeout - cfg.dt * 0.5;
    match (all_home, timed_out) {
        (false, false) => EpisodeStatus::Running,
        _ if collision_latched => EpisodeStatus::CollisionFlagged,
        (true, _) => EpisodeStatus::AllAtGoal { makespan: t },
        (false, true) => EpisodeStatus::TimedOut,
    }
}
