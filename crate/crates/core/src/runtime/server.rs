//! Orchestration state machine.
//!
//! The server collects heartbeats and placement acknowledgements from the
//! agents on `am` and broadcasts the operating mode plus initial conditions
//! on `sm`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::world::EpisodeStatus;
use crate::{AgentId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerState {
    WaitingForAgents,
    Resetting,
    Running,
    EpisodeDone,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub heartbeat_period: f64,
    /// A heartbeat older than this counts as lost.
    pub heartbeat_timeout: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            heartbeat_period: 1.0,
            heartbeat_timeout: 3.0,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.heartbeat_period > 0.0 && self.heartbeat_timeout >= self.heartbeat_period) {
            return Err(Error::validation(
                "heartbeat period must be positive and not exceed the timeout",
            ));
        }
        Ok(())
    }
}

/// Agent to server, on `am`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentReport {
    Heartbeat { agent: AgentId },
    Placed { agent: AgentId, episode: usize },
    /// From the simulated world in wall-clock runs. The state machine takes
    /// the episode status as an argument, so [`StateServer::step`] ignores it.
    EpisodeEnded { episode: usize, status: EpisodeStatus },
}

/// Server to agents, on `sm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub state: ServerState,
    pub episode: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Vec2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConditions {
    pub starts: Vec<Vec2>,
    pub goals: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub at: f64,
    pub from: ServerState,
    pub to: ServerState,
    pub episode: usize,
}

#[derive(Debug, Clone)]
pub struct StateServer {
    state: ServerState,
    episode: usize,
    agents: Vec<AgentId>,
    conditions: Vec<EpisodeConditions>,
    heartbeats: BTreeMap<AgentId, f64>,
    placed: BTreeSet<AgentId>,
    paused: bool,
    cfg: ServerConfig,
    transitions: Vec<Transition>,
}

impl StateServer {
    /// `conditions` holds the starts and goals of every episode in run order.
    pub fn new(agents: Vec<AgentId>, conditions: Vec<EpisodeConditions>, cfg: ServerConfig) -> Result<Self> {
        cfg.validate()?;
        if agents.is_empty() || conditions.is_empty() {
            return Err(Error::validation("state server needs agents and at least one episode"));
        }
        Ok(Self {
            state: ServerState::WaitingForAgents,
            episode: 0,
            agents,
            conditions,
            heartbeats: BTreeMap::new(),
            placed: BTreeSet::new(),
            paused: false,
            cfg,
            transitions: Vec::new(),
        })
    }

    pub fn state(&self) -> ServerState {
        self.state
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn total_episodes(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn heartbeats(&self) -> &BTreeMap<AgentId, f64> {
        &self.heartbeats
    }

    pub fn all_fresh(&self, now: f64) -> bool {
        self.agents.iter().all(|a| {
            self.heartbeats
                .get(a)
                .is_some_and(|&seen| now - seen <= self.cfg.heartbeat_timeout)
        })
    }

    fn go(&mut self, to: ServerState, now: f64) {
        self.transitions.push(Transition {
            at: now,
            from: self.state,
            to,
            episode: self.episode,
        });
        self.state = to;
    }

    /// The broadcast for the current state.
    pub fn announce(&self) -> Broadcast {
        let reset = self.state == ServerState::Resetting;
        let c = &self.conditions[self.episode.min(self.conditions.len() - 1)];
        Broadcast {
            state: self.state,
            episode: self.episode,
            starts: reset.then(|| c.starts.clone()),
            goals: reset.then(|| c.goals.clone()),
        }
    }

    /// Consumes reports received by `now` and the status of the running
    /// episode, and advances at most one transition. Returns the state and
    /// the broadcast to send, if the state changed.
    pub fn step(
        &mut self,
        reports: &[AgentReport],
        episode_status: Option<EpisodeStatus>,
        now: f64,
    ) -> (ServerState, Option<Broadcast>) {
        for r in reports {
            match *r {
                AgentReport::Heartbeat { agent } => {
                    if self.agents.contains(&agent) {
                        self.heartbeats.insert(agent, now);
                    }
                }
                AgentReport::Placed { agent, episode } => {
                    if episode == self.episode && self.agents.contains(&agent) {
                        self.placed.insert(agent);
                    }
                }
                AgentReport::EpisodeEnded { .. } => {}
            }
        }
        let fresh = self.all_fresh(now);
        let before = self.state;
        match self.state {
            ServerState::Finished => {}
            ServerState::WaitingForAgents => {
                if fresh {
                    if self.paused {
                        self.paused = false;
                        log::info!("t={now:.2}: heartbeats recovered, resuming episode {}", self.episode);
                        self.go(ServerState::Running, now);
                    } else {
                        self.placed.clear();
                        self.go(ServerState::Resetting, now);
                    }
                }
            }
            ServerState::Resetting => {
                if !fresh {
                    log::warn!("t={now:.2}: heartbeat lost while resetting episode {}", self.episode);
                    self.go(ServerState::WaitingForAgents, now);
                } else if self.placed.len() == self.agents.len() {
                    self.go(ServerState::Running, now);
                }
            }
            ServerState::Running => {
                if episode_status.is_some_and(|s| s.is_done()) {
                    self.go(ServerState::EpisodeDone, now);
                } else if !fresh {
                    log::warn!("t={now:.2}: heartbeat lost, pausing episode {}", self.episode);
                    self.paused = true;
                    self.go(ServerState::WaitingForAgents, now);
                }
            }
            ServerState::EpisodeDone => {
                self.episode += 1;
                self.placed.clear();
                if self.episode >= self.conditions.len() {
                    self.go(ServerState::Finished, now);
                } else {
                    self.go(ServerState::Resetting, now);
                }
            }
        }
        let changed = self.state != before;
        (self.state, changed.then(|| self.announce()))
    }
}
