//! Python bindings: policy weights and evaluation, the world model, the
//! network emulator, episode runs and trace metrics.
//!
//! Configuration objects (world, communication rule, scenario, plan) cross
//! the boundary as JSON strings in the same format the CLI reads.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use swarm_mesh::geom::Vec2;
use swarm_mesh::metrics::{self, Backend, MetricsSummary, NetbenchConfig};
use swarm_mesh::policy::{self, Action, Message, Observation, PolicyDims, PolicyWeights, ReferenceGains};
use swarm_mesh::runtime::{self, EpisodeTrace, ExperimentPlan, ModeConfig};
use swarm_mesh::transport::{self, TransportMode, TransportPreset};
use swarm_mesh::world::{self, AgentKinematics, CommConfig, EpisodeStatus, ScenarioSpec, WorldConfig};
use swarm_mesh::{AgentId, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Transport(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("bad {what} JSON: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn observation(z: Vec<f64>) -> PyResult<Observation> {
    Observation::from_slice(&z).map_err(err)
}

fn ids(n: usize) -> Vec<AgentId> {
    (0..n as u32).map(AgentId).collect()
}

fn comm_config(comm: Option<&str>) -> PyResult<CommConfig> {
    let c: CommConfig = comm.map(|t| from_json("comm", t)).transpose()?.unwrap_or_default();
    c.validate().map_err(err)?;
    Ok(c)
}

/// Policy weights: encoder, message network and action network.
#[pyclass(name = "Policy", module = "swarm_mesh_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: PolicyWeights,
}

#[pymethods]
impl PyPolicy {
    /// Hand-built reference policy. Unspecified gains keep their defaults.
    #[staticmethod]
    #[pyo3(signature = (goal=None, repulsion=None, range=None, rotation_deg=None, goal_cap=None))]
    fn reference(
        goal: Option<f64>,
        repulsion: Option<f64>,
        range: Option<f64>,
        rotation_deg: Option<f64>,
        goal_cap: Option<f64>,
    ) -> PyResult<Self> {
        let d = ReferenceGains::default();
        let gains = ReferenceGains {
            goal: goal.unwrap_or(d.goal),
            repulsion: repulsion.unwrap_or(d.repulsion),
            range: range.unwrap_or(d.range),
            rotation_deg: rotation_deg.unwrap_or(d.rotation_deg),
            goal_cap: goal_cap.unwrap_or(d.goal_cap),
        };
        Ok(Self {
            inner: policy::reference_weights(&gains).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, latent_dim=16, hidden=vec![64, 64]))]
    fn random(seed: u64, latent_dim: usize, hidden: Vec<usize>) -> PyResult<Self> {
        let dims = PolicyDims { latent_dim, hidden };
        Ok(Self {
            inner: policy::random_weights(seed, &dims).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: policy::load_weights(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyWeights::from_json(text).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        policy::save_weights(&self.inner, path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    /// Latent of one six-component observation.
    fn encode(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        policy::encode(&self.inner, &observation(obs)?).map_err(err)
    }

    /// One agent's decision from the messages it holds. `messages` is a list
    /// of `(sender, timestamp, latent)`; returns `(action, own latent)`.
    #[pyo3(signature = (agent, obs, messages, now=0.0))]
    fn evaluate_local(
        &self,
        agent: u32,
        obs: Vec<f64>,
        messages: Vec<(u32, f64, Vec<f64>)>,
        now: f64,
    ) -> PyResult<(Vec2, Vec<f64>)> {
        let msgs: Vec<Message> = messages
            .into_iter()
            .map(|(s, t, payload)| Message {
                sender: AgentId(s),
                timestamp: t,
                payload,
            })
            .collect();
        let (a, m) = policy::evaluate_local(&self.inner, AgentId(agent), now, &observation(obs)?, &msgs).map_err(err)?;
        Ok((a.v_d, m.payload))
    }

    /// Whole-team actions. Agent `k` has id `k`; the graph is built from
    /// `positions` under the communication rule `comm` (JSON, default a
    /// 2 m fixed radius) at tick `tick`.
    #[pyo3(signature = (observations, positions, comm=None, tick=0))]
    fn evaluate_centralized(
        &self,
        observations: Vec<Vec<f64>>,
        positions: Vec<Vec2>,
        comm: Option<&str>,
        tick: u64,
    ) -> PyResult<Vec<Vec2>> {
        let obs = observations.into_iter().map(observation).collect::<PyResult<Vec<_>>>()?;
        if obs.len() != positions.len() {
            return Err(PyValueError::new_err("one position per observation"));
        }
        let graph = world::compute_neighborhood(&ids(positions.len()), &positions, &comm_config(comm)?, tick);
        let actions = policy::evaluate_centralized(&self.inner, &obs, &graph).map_err(err)?;
        Ok(actions.into_iter().map(|a| a.v_d).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(latent_dim={}, enc_layers={}, gnn_layers={}, act_layers={})",
            self.inner.latent_dim,
            self.inner.enc.layers.len(),
            self.inner.gnn.layers.len(),
            self.inner.act.layers.len()
        )
    }
}

/// `[p, p_goal - p, p + v]`.
#[pyfunction]
fn build_observation(p: Vec2, v: Vec2, goal: Vec2) -> Vec<f64> {
    policy::build_observation(p, v, goal).0.to_vec()
}

/// In-neighbour ids of every agent, ascending.
#[pyfunction]
#[pyo3(signature = (positions, comm=None, tick=0))]
fn neighborhood(positions: Vec<Vec2>, comm: Option<&str>, tick: u64) -> PyResult<Vec<Vec<u32>>> {
    let g = world::compute_neighborhood(&ids(positions.len()), &positions, &comm_config(comm)?, tick);
    Ok((0..g.len()).map(|i| g.in_neighbors(i).into_iter().map(|a| a.0).collect()).collect())
}

/// One limited integration step. Returns `(p, v, a)`; walls are not applied.
#[pyfunction]
#[pyo3(signature = (p, v, command, world=None))]
fn step_dynamics(p: Vec2, v: Vec2, command: Vec2, world: Option<&str>) -> PyResult<(Vec2, Vec2, Vec2)> {
    let cfg: WorldConfig = world.map(|t| from_json("world", t)).transpose()?.unwrap_or_default();
    let mut s = AgentKinematics::at_rest(AgentId(0), p, p, cfg.agent_radius);
    s.v_m = v;
    let next = world::step_dynamics(&s, Action { v_d: command }, &cfg).map_err(err)?;
    Ok((next.p, next.v_m, next.a_d))
}

/// Whether an agent disc at `p` touches the wall or leaves the arena.
#[pyfunction]
#[pyo3(signature = (p, world=None))]
fn hits_geometry(p: Vec2, world: Option<&str>) -> PyResult<bool> {
    let cfg: WorldConfig = world.map(|t| from_json("world", t)).transpose()?.unwrap_or_default();
    Ok(world::hits_geometry(p, cfg.agent_radius, &cfg))
}

/// `1 - p^(L+1)`.
#[pyfunction]
fn delivery_prob(loss: f64, retries: u8) -> f64 {
    transport::effective_delivery_prob(loss, retries)
}

/// Physical first transmissions for one message to `subscribers`.
#[pyfunction]
fn fanout_count(multicast: bool, subscribers: usize) -> usize {
    let mode = if multicast {
        TransportMode::Multicast {
            retry_limit: 0,
            positive_acks: false,
        }
    } else {
        TransportMode::Unicast {
            retry_limit: 0,
            positive_acks: false,
        }
    };
    transport::mode::fanout_count(&mode, subscribers)
}

/// JSON of a built-in transport preset.
#[pyfunction]
fn preset(name: &str) -> PyResult<String> {
    Ok(to_json(&TransportPreset::builtin(name).map_err(err)?))
}

/// Emulated latency benchmark of one preset at one rate; returns JSON.
#[pyfunction]
#[pyo3(signature = (preset, rate, messages=10_000, nodes=5, seed=0))]
fn netbench(preset: &str, rate: f64, messages: u64, nodes: usize, seed: u64) -> PyResult<String> {
    let mut cfg = NetbenchConfig::new(vec![TransportPreset::resolve(preset).map_err(err)?], vec![rate]);
    cfg.backend = Backend::Emu;
    cfg.messages = Some(messages);
    cfg.nodes = nodes;
    cfg.seed = seed;
    let res = metrics::netbench(&cfg).map_err(err)?;
    Ok(to_json(&res[0]))
}

/// One recorded episode.
#[pyclass(name = "Trace", module = "swarm_mesh_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: EpisodeTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: EpisodeTrace::load(path).map_err(err)?,
        })
    }

    #[getter]
    fn index(&self) -> usize {
        self.inner.header.index
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.header.mode.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.header.seed
    }

    /// `"all_at_goal"`, `"timed_out"` or `"collision_flagged"`.
    #[getter]
    fn status(&self) -> &'static str {
        match self.inner.footer.status {
            EpisodeStatus::Running => "running",
            EpisodeStatus::AllAtGoal { .. } => "all_at_goal",
            EpisodeStatus::TimedOut => "timed_out",
            EpisodeStatus::CollisionFlagged => "collision_flagged",
        }
    }

    #[getter]
    fn makespan(&self) -> PyResult<Option<f64>> {
        metrics::compute_makespan(&self.inner, self.inner.header.world.thresholds.goal).map_err(err)
    }

    #[getter]
    fn success(&self) -> PyResult<bool> {
        metrics::is_success(&self.inner).map_err(err)
    }

    #[getter]
    fn num_ticks(&self) -> usize {
        self.inner.ticks.len()
    }

    #[getter]
    fn starts(&self) -> Vec<Vec2> {
        self.inner.header.starts.clone()
    }

    #[getter]
    fn goals(&self) -> Vec<Vec2> {
        self.inner.header.goals.clone()
    }

    /// Positions per tick, `[tick][agent] -> [x, y]`.
    fn positions(&self) -> Vec<Vec<Vec2>> {
        self.inner.ticks.iter().map(|t| t.agents.iter().map(|a| a.p).collect()).collect()
    }

    /// Commanded velocities per tick; the final tick has none.
    fn actions(&self) -> Vec<Vec<Option<Vec2>>> {
        self.inner.ticks.iter().map(|t| t.agents.iter().map(|a| a.action).collect()).collect()
    }

    /// `(d_min, d_origin)` per tick.
    fn dmin_dorigin(&self) -> PyResult<Vec<(f64, f64)>> {
        metrics::compute_dmin_dorigin(&self.inner).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn to_ndjson(&self) -> String {
        self.inner.to_ndjson()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(index={}, mode={:?}, status={}, ticks={})",
            self.inner.header.index,
            self.inner.header.mode,
            self.status(),
            self.inner.ticks.len()
        )
    }
}

fn scenario(text: &str) -> PyResult<ScenarioSpec> {
    let spec: ScenarioSpec = from_json("scenario", text)?;
    spec.validate().map_err(err)?;
    Ok(spec)
}

/// Shuffle scenario JSON: `n` (even) agents on mirrored sites.
#[pyfunction]
fn shuffle_scenario(n: usize, extent: f64, episodes: usize, seed: u64) -> PyResult<String> {
    Ok(to_json(&ScenarioSpec::shuffle(n, extent, episodes, seed).map_err(err)?))
}

/// Passage scenario JSON: a cross formation crossing a wall gap.
#[pyfunction]
fn passage_scenario(n: usize, episodes: usize) -> PyResult<String> {
    Ok(to_json(&ScenarioSpec::passage(n, episodes).map_err(err)?))
}

/// First episode of `scenario` (JSON) under `mode`, e.g. `"offboard"` or
/// `"onboard-adhoc:adhoc-multicast-r1"`.
#[pyfunction]
#[pyo3(signature = (mode, scenario_json, policy, seed=0, aligned=true))]
fn run_episode(py: Python<'_>, mode: &str, scenario_json: &str, policy: &PyPolicy, seed: u64, aligned: bool) -> PyResult<PyTrace> {
    let mut m = ModeConfig::parse(mode).map_err(err)?;
    m.aligned = aligned;
    let spec = scenario(scenario_json)?;
    let w = policy.inner.clone();
    let inner = py.detach(move || runtime::run_episode(&m, &spec, &w, seed)).map_err(err)?;
    Ok(PyTrace { inner })
}

/// Runs a plan (JSON, as for `swarm-mesh run --plan`) under the state
/// server on the virtual clock. Traces are also written to `out` if given.
#[pyfunction]
#[pyo3(signature = (plan_json, out=None))]
fn run_experiment(py: Python<'_>, plan_json: &str, out: Option<PathBuf>) -> PyResult<Vec<PyTrace>> {
    let plan = ExperimentPlan::from_json(plan_json).map_err(err)?;
    let outcome = py.detach(move || runtime::run_experiment(&plan, out.as_deref())).map_err(err)?;
    Ok(outcome.traces.into_iter().map(|inner| PyTrace { inner }).collect())
}

/// Success rate, median makespan and termination counts as JSON.
#[pyfunction]
fn summarize(label: &str, traces: Vec<PyRef<'_, PyTrace>>) -> PyResult<String> {
    let all: Vec<EpisodeTrace> = traces.iter().map(|t| t.inner.clone()).collect();
    Ok(to_json(&MetricsSummary::from_traces(label, &all).map_err(err)?))
}

/// Every trace in a directory, by experiment index.
#[pyfunction]
fn load_traces(dir: PathBuf) -> PyResult<Vec<PyTrace>> {
    Ok(runtime::load_trace_dir(dir)
        .map_err(err)?
        .into_iter()
        .map(|inner| PyTrace { inner })
        .collect())
}

#[pymodule]
fn swarm_mesh_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(build_observation, m)?)?;
    m.add_function(wrap_pyfunction!(neighborhood, m)?)?;
    m.add_function(wrap_pyfunction!(step_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(hits_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(delivery_prob, m)?)?;
    m.add_function(wrap_pyfunction!(fanout_count, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(netbench, m)?)?;
    m.add_function(wrap_pyfunction!(shuffle_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(passage_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(load_traces, m)?)?;
    Ok(())
}
