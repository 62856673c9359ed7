//! Evaluation metrics computed from traces, plus the latency benchmark.

pub mod dump;
pub mod netbench;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec2};
use crate::runtime::EpisodeTrace;
use crate::world::EpisodeStatus;
use crate::{Error, Result};

pub use dump::{write_cdf_csv, write_distributions, CsvSchema};
pub use netbench::{netbench, Backend, NetbenchConfig, NetbenchResult};

/// Earliest tick time at which every agent is within `goal_threshold` of
/// its goal. `None` for collision-flagged or timed-out traces.
pub fn compute_makespan(trace: &EpisodeTrace, goal_threshold: f64) -> Result<Option<f64>> {
    if trace.is_collision_flagged() || !matches!(trace.footer.status, EpisodeStatus::AllAtGoal { .. }) {
        return Ok(None);
    }
    let goals = &trace.header.goals;
    for tick in &trace.ticks {
        if tick.agents.len() != goals.len() {
            return Err(Error::Parse {
                offset: 0,
                message: format!("tick {} has {} agents, header has {}", tick.tick, tick.agents.len(), goals.len()),
            });
        }
        let home = tick.agents.iter().all(|a| {
            goals
                .get(a.agent.0 as usize)
                .is_some_and(|g| geom::dist(a.p, *g) <= goal_threshold)
        });
        if home {
            return Ok(Some(tick.t));
        }
    }
    Ok(None)
}

pub fn is_success(trace: &EpisodeTrace) -> Result<bool> {
    Ok(compute_makespan(trace, trace.header.world.thresholds.goal)?.is_some())
}

/// Fraction of traces that are collision free and reach every goal.
pub fn compute_success(traces: &[EpisodeTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::validation("success rate of zero traces"));
    }
    let mut ok = 0usize;
    for t in traces {
        if is_success(t)? {
            ok += 1;
        }
    }
    Ok(ok as f64 / traces.len() as f64)
}

/// Per tick: minimum pairwise centre distance and the smallest distance of
/// any agent to the origin (the passage centre).
pub fn compute_dmin_dorigin(trace: &EpisodeTrace) -> Result<Vec<(f64, f64)>> {
    if trace.header.agents.len() < 2 {
        return Err(Error::validation("d_min needs at least two agents"));
    }
    let origin = trace.header.origin();
    trace
        .ticks
        .iter()
        .map(|tick| {
            let pts: Vec<Vec2> = tick.agents.iter().map(|a| a.p).collect();
            if pts.len() < 2 {
                return Err(Error::validation(format!("tick {} has fewer than two agents", tick.tick)));
            }
            let mut d_min = f64::INFINITY;
            for (i, a) in pts.iter().enumerate() {
                for b in &pts[i + 1..] {
                    d_min = d_min.min(geom::dist(*a, *b));
                }
            }
            let d_origin = pts
                .iter()
                .map(|p| geom::dist(*p, origin))
                .fold(f64::INFINITY, f64::min);
            Ok((d_min, d_origin))
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationCounts {
    pub all_at_goal: usize,
    pub timed_out: usize,
    pub collision_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub label: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful episodes only.
    pub median_makespan: Option<f64>,
    pub terminations: TerminationCounts,
}

impl MetricsSummary {
    pub fn from_traces(label: impl Into<String>, traces: &[EpisodeTrace]) -> Result<Self> {
        let success_rate = compute_success(traces)?;
        let mut makespans = Vec::new();
        let mut terminations = TerminationCounts::default();
        for t in traces {
            if let Some(m) = compute_makespan(t, t.header.world.thresholds.goal)? {
                makespans.push(m);
            }
            match t.footer.status {
                _ if t.is_collision_flagged() => terminations.collision_flagged += 1,
                EpisodeStatus::AllAtGoal { .. } => terminations.all_at_goal += 1,
                _ => terminations.timed_out += 1,
            }
        }
        Ok(Self {
            label: label.into(),
            episodes: traces.len(),
            successes: makespans.len(),
            success_rate,
            median_makespan: median(&makespans),
            terminations,
        })
    }

    /// One table row, success rate to three decimals.
    pub fn row(&self) -> String {
        format!(
            "{:<16} {:>4} episodes  success {:.3}  median makespan {}",
            self.label,
            self.episodes,
            self.success_rate,
            self.median_makespan.map_or("-".to_string(), |m| format!("{m:.2} s"))
        )
    }
}
