//! Runtime for executing graph-neural-network multi-robot policies in
//! centralized and progressively decentralized modes.
//!
//! The crate is organised bottom-up:
//!
//! * [`policy`] evaluates the encoder / message / action networks, either
//!   for one agent from its received messages or for the whole team at once.
//! * [`world`] is the deterministic planar simulator (holonomic kinematics,
//!   wall with a passage, communication graphs, scenario chaining).
//! * [`transport`] moves messages: a seeded emulated wireless network and a
//!   real UDP backend with application-level acknowledgements.
//! * [`runtime`] ties agents, transport and world together into episodes and
//!   experiments driven by the state server.
//! * [`metrics`] turns trace files into success rates, makespans and
//!   distribution dumps, and runs the latency benchmark.


pub mod cli;
pub mod error;
pub mod geom;
pub mod metrics;

pub mod policy;
pub mod runtime;
pub mod rng;

pub mod transport;
pub mod world;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Identifier of one agent (robot). Also the canonical aggregation order key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
