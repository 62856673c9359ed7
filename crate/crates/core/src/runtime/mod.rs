//! Episode execution, orchestration and traces.

pub mod cache;
pub mod episode;
pub mod experiment;
pub mod mode;
pub mod server;
pub mod trace;
pub mod wallclock;

pub use cache::{MessageCache, DEFAULT_WINDOW};
pub use episode::{observe, run_episode, trace_header, AgentRuntime, EpisodeRunner, EpisodeSetup, EpisodeWorld, EventQueue, Phase};
pub use mode::{ModeConfig, ModeVariant};
pub use trace::{load_trace_dir, AgentRecord, EpisodeTrace, TickRecord, TraceFooter, TraceHeader, TRACE_SCHEMA};
pub use experiment::{run_experiment, ExperimentOutcome, ExperimentPlan, HeartbeatFault, PolicySource, ScenarioSource};
pub use server::{AgentReport, Broadcast, ServerConfig, ServerState, StateServer};
pub use wallclock::{run_wallclock_experiment, WallClockOptions, WallClockOutcome, WORLD};
