//! Experiment plans: `K` repetitions of `E` chained episodes, orchestrated
//! by the state server over a control channel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{EpisodeRunner, EpisodeSetup};
use super::mode::ModeConfig;
use super::server::{AgentReport, Broadcast, EpisodeConditions, ServerConfig, ServerState, StateServer, Transition};
use super::trace::EpisodeTrace;
use crate::geom::{self, Vec2};
use crate::policy::{load_weights, random_weights, reference_weights, Action, PolicyDims, PolicyWeights, ReferenceGains};
use crate::rng::key_seed;
use crate::transport::{EmuTransport, Topic, Transport, TransportPreset};
use crate::world::{spawn_scenario, step_dynamics, AgentKinematics, ScenarioSpec, WorldConfig};
use crate::{AgentId, Error, Result};

/// Endpoint of the state server on the control channel.
pub const SERVER: AgentId = AgentId(u32::MAX - 2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Cross formation left of a wall, alternating sides.
    Passage { n: usize },
    CircleSwap { n: usize, radius: f64 },
    Shuffle { n: usize, extent: f64, seed: u64 },
    File(PathBuf),
    Inline(ScenarioSpec),
}

impl ScenarioSource {
    pub fn build(&self, episodes: usize, base: &Path) -> Result<ScenarioSpec> {
        match self {
            ScenarioSource::Passage { n } => ScenarioSpec::passage(*n, episodes),
            ScenarioSource::CircleSwap { n, radius } => {
                ScenarioSpec::circle_swap(*n, *radius, episodes + episodes % 2)
            }
            ScenarioSource::Shuffle { n, extent, seed } => ScenarioSpec::shuffle(*n, *extent, episodes, *seed),
            ScenarioSource::File(p) => ScenarioSpec::load(base.join(p)),
            ScenarioSource::Inline(s) => {
                s.validate()?;
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    Reference(ReferenceGains),
    Random {
        seed: u64,
        #[serde(default)]
        dims: PolicyDims,
    },
    File(PathBuf),
}

impl PolicySource {
    pub fn load(&self, base: &Path) -> Result<PolicyWeights> {
        match self {
            PolicySource::Reference(g) => reference_weights(g),
            PolicySource::Random { seed, dims } => random_weights(*seed, dims),
            PolicySource::File(p) => load_weights(base.join(p)),
        }
    }
}

/// Heartbeats of `agent` stop for `duration` seconds once experiment
/// episode `episode_index` reaches tick `at_tick`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatFault {
    pub agent: AgentId,
    pub episode_index: usize,
    pub at_tick: u64,
    pub duration: f64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_mode() -> String {
    "offboard".into()
}

fn default_policy() -> PolicySource {
    PolicySource::Reference(ReferenceGains::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Repetitions.
    #[serde(default = "one")]
    pub k: usize,
    /// Chained episode configurations per repetition.
    pub e: usize,
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSource,
    #[serde(default = "default_policy")]
    pub policy: PolicySource,
    /// `<mode>` or `<mode>:<preset name or file>`.
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "yes")]
    pub aligned: bool,
    #[serde(default)]
    pub cache_window: Option<f64>,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub faults: Vec<HeartbeatFault>,
    /// Drive agents to their starts between episodes instead of placing
    /// them there.
    #[serde(default)]
    pub drive_to_start: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn new(k: usize, e: usize, seed: u64, scenario: ScenarioSource) -> Self {
        Self {
            k,
            e,
            seed,
            scenario,
            policy: default_policy(),
            mode: default_mode(),
            aligned: true,
            cache_window: None,
            server: ServerConfig::default(),
            faults: Vec::new(),
            drive_to_start: false,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::from_json(&text)?;
        plan.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.e == 0 {
            return Err(Error::validation("plan needs k >= 1 and e >= 1"));
        }
        self.server.validate()?;
        self.mode_config()?;
        for f in &self.faults {
            if f.episode_index >= self.total_episodes() || !(f.duration >= 0.0) {
                return Err(Error::validation(format!("heartbeat fault out of range: {f:?}")));
            }
        }
        Ok(())
    }

    pub fn total_episodes(&self) -> usize {
        self.k * self.e
    }

    pub fn mode_config(&self) -> Result<ModeConfig> {
        let mut m = ModeConfig::parse(&self.mode)?;
        m.aligned = self.aligned;
        if let Some(w) = self.cache_window {
            m.cache_window = w;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let spec = self.scenario.build(self.e, &self.base_dir)?;
        if spec.episodes() < self.e {
            return Err(Error::validation(format!(
                "scenario has {} goal sets, plan needs {}",
                spec.episodes(),
                self.e
            )));
        }
        Ok(spec)
    }

    pub fn weights(&self) -> Result<PolicyWeights> {
        self.policy.load(&self.base_dir)
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        key_seed(&[self.seed, index as u64])
    }

    /// Starts and goals of every episode in run order. Each repetition
    /// begins from the scenario starts; later episodes start at the
    /// previous goals.
    pub fn conditions(&self, spec: &ScenarioSpec) -> Result<Vec<EpisodeConditions>> {
        let mut out = Vec::with_capacity(self.total_episodes());
        for _ in 0..self.k {
            let mut prev: Option<Vec<Vec2>> = None;
            for e in 0..self.e {
                let (starts, goals) = spawn_scenario(spec, e, prev.as_deref())?;
                prev = Some(goals.clone());
                out.push(EpisodeConditions { starts, goals });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub traces: Vec<EpisodeTrace>,
    pub final_state: ServerState,
    pub transitions: Vec<Transition>,
}

/// Proportional drive from `from` towards `to` under the world's limits,
/// ignoring other agents. Returns where each agent ends up.
pub fn drive_to_start(from: &[Vec2], to: &[Vec2], world: &WorldConfig) -> Result<Vec<Vec2>> {
    let mut states: Vec<AgentKinematics> = from
        .iter()
        .zip(to)
        .enumerate()
        .map(|(i, (p, g))| AgentKinematics::at_rest(AgentId(i as u32), *p, *g, world.agent_radius))
        .collect();
    for _ in 0..world.max_ticks() {
        if states.iter().all(|s| s.goal_distance() < 0.02 && geom::norm(s.v_m) < 0.05) {
            break;
        }
        for s in &mut states {
            let v_d = geom::clamp_norm(geom::scale(geom::sub(s.p_g, s.p), 1.5), world.v_max);
            *s = step_dynamics(s, Action { v_d }, world)?;
        }
    }
    Ok(states.iter().map(|s| s.p).collect())
}

pub(super) fn decode<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Transport(format!("bad control message: {e}")))
}

pub(super) fn encode<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("control messages serialize")
}

/// Runs every episode of `plan` under the state server. Traces are written
/// to `out` as each episode finishes, so an I/O failure leaves the
/// completed ones on disk.
pub fn run_experiment(plan: &ExperimentPlan, out: Option<&Path>) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let spec = plan.scenario_spec()?;
    let weights = plan.weights()?;
    let mode = plan.mode_config()?;
    let conditions = plan.conditions(&spec)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ids: Vec<AgentId> = (0..spec.n as u32).map(AgentId).collect();
    let mut server = StateServer::new(ids.clone(), conditions.clone(), plan.server)?;
    let mut control = EmuTransport::new(TransportPreset::builtin("ideal")?, 0.0);
    control.subscribe(SERVER, Topic::AgentMode)?;
    for &a in &ids {
        control.subscribe(a, Topic::StateMachine)?;
    }

    let dt = spec.world.dt;
    let period = plan.server.heartbeat_period;
    let mut last_beat: Vec<Option<f64>> = vec![None; ids.len()];
    let mut fault_start: Vec<Option<f64>> = vec![None; plan.faults.len()];
    let mut runner: Option<EpisodeRunner> = None;
    let mut traces = Vec::with_capacity(conditions.len());
    let mut last_positions: Option<Vec<Vec2>> = None;
    let budget = conditions.len() as u64 * (spec.world.max_ticks() + 1_000) + 10_000;

    for g in 0..budget {
        let now = g as f64 * dt;
        for (i, &a) in ids.iter().enumerate() {
            let silenced = plan.faults.iter().zip(&fault_start).any(|(f, s)| {
                f.agent == a && s.is_some_and(|s0| now >= s0 && now < s0 + f.duration)
            });
            let due = last_beat[i].is_none_or(|t| now - t >= period - 1e-9);
            if !silenced && due {
                control.publish(a, Topic::AgentMode, encode(&AgentReport::Heartbeat { agent: a }), now)?;
                last_beat[i] = Some(now);
            }
        }
        let reports = control
            .poll(SERVER, now)?
            .iter()
            .map(|d| decode::<AgentReport>(&d.payload))
            .collect::<Result<Vec<_>>>()?;
        let was = server.state();
        let status = runner.as_ref().map(|r| r.status());
        let (state, broadcast) = server.step(&reports, status, now);
        if was == ServerState::Running && state == ServerState::WaitingForAgents {
            if let Some(r) = runner.as_mut() {
                r.note_pause();
            }
        }
        if let Some(b) = &broadcast {
            control.publish(SERVER, Topic::StateMachine, encode(b), now)?;
        }
        // World and agents react to the broadcast.
        for (i, &a) in ids.iter().enumerate() {
            for d in control.poll(a, now)? {
                let b: Broadcast = decode(&d.payload)?;
                match b.state {
                    ServerState::Resetting => {
                        if i == 0 {
                            let c = &conditions[b.episode];
                            let starts = match (&last_positions, plan.drive_to_start) {
                                (Some(from), true) => drive_to_start(from, &c.starts, &spec.world)?,
                                _ => b.starts.clone().unwrap_or_else(|| c.starts.clone()),
                            };
                            let setup = EpisodeSetup {
                                index: b.episode,
                                repetition: b.episode / plan.e,
                                episode: b.episode % plan.e,
                                seed: plan.episode_seed(b.episode),
                                starts,
                                goals: b.goals.clone().unwrap_or_else(|| c.goals.clone()),
                            };
                            runner = Some(EpisodeRunner::new(&mode, &spec.world, &spec.comm, &weights, setup)?);
                        }
                        let placed = AgentReport::Placed {
                            agent: a,
                            episode: b.episode,
                        };
                        control.publish(a, Topic::AgentMode, encode(&placed), now)?;
                    }
                    ServerState::EpisodeDone if i == 0 => {
                        if let Some(r) = runner.take() {
                            let trace = r.finish();
                            last_positions = trace.ticks.last().map(|t| t.agents.iter().map(|a| a.p).collect());
                            if let Some(dir) = out {
                                trace.save(dir.join(trace.file_name()))?;
                            }
                            log::info!(
                                "episode {} finished: {:?}",
                                trace.header.index,
                                trace.footer.status
                            );
                            traces.push(trace);
                        }
                    }
                    _ => {}
                }
            }
        }
        match state {
            ServerState::Finished => {
                return Ok(ExperimentOutcome {
                    traces,
                    final_state: state,
                    transitions: server.transitions().to_vec(),
                });
            }
            ServerState::Running => {
                if let Some(r) = runner.as_mut() {
                    r.step()?;
                    let index = server.episode();
                    for (f, s) in plan.faults.iter().zip(fault_start.iter_mut()) {
                        if s.is_none() && f.episode_index == index && r.tick_index() >= f.at_tick {
                            log::info!("injecting heartbeat loss for agent {} at t={now:.2}", f.agent);
                            *s = Some(now);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Err(Error::validation(format!(
        "experiment did not finish within {budget} control ticks (state {:?})",
        server.state()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(k: usize, e: usize) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(k, e, 5, ScenarioSource::Shuffle { n: 4, extent: 2.0, seed: 1 });
        p.mode = "offboard".into();
        p
    }

    #[test]
    fn plan_json_defaults() {
        let p = ExperimentPlan::from_json(r#"{"e": 2, "scenario": {"passage": {"n": 5}}}"#).unwrap();
        assert_eq!(p.k, 1);
        assert_eq!(p.mode, "offboard");
        assert!(matches!(p.policy, PolicySource::Reference(_)));
        assert!(ExperimentPlan::from_json(r#"{"e": 0, "scenario": {"passage": {"n": 5}}}"#).is_err());
        assert!(ExperimentPlan::from_json(r#"{"e": 1, "scenario": {"passage": {"n": 5}}, "mode": "centralized:adhoc-multicast-r1"}"#).is_err());
    }

    #[test]
    fn chained_starts_follow_previous_goals() {
        let p = plan(1, 2);
        let out = run_experiment(&p, None).unwrap();
        assert_eq!(out.traces.len(), 2);
        assert_eq!(out.final_state, ServerState::Finished);
        assert_eq!(out.traces[1].header.starts, out.traces[0].header.goals);
    }

    #[test]
    fn repetitions_restart_from_scenario_starts() {
        let p = plan(2, 2);
        let spec = p.scenario_spec().unwrap();
        let out = run_experiment(&p, None).unwrap();
        assert_eq!(out.traces.len(), 4);
        assert_eq!(out.traces[2].header.starts, spec.starts);
        assert_eq!(out.traces[2].header.repetition, 1);
        assert_eq!(out.traces[3].header.index, 3);
    }

    #[test]
    fn trivially_reachable_goal_succeeds() {
        let mut spec = ScenarioSpec::passage(2, 1).unwrap();
        spec.goal_sets[0] = spec.starts.iter().map(|p| [p[0], p[1] + 0.1]).collect();
        let p = ExperimentPlan::new(1, 1, 0, ScenarioSource::Inline(spec));
        let out = run_experiment(&p, None).unwrap();
        assert!(out.traces[0].footer.makespan().is_some());
    }

    #[test]
    fn drive_to_start_arrives() {
        let w = WorldConfig::default();
        let got = drive_to_start(&[[0.0, 0.0]], &[[2.0, 1.0]], &w).unwrap();
        assert!(geom::dist(got[0], [2.0, 1.0]) < 0.05);
    }
}
