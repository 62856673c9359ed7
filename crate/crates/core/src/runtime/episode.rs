//! Virtual-clock episode execution.
//!
//! Each tick `k` at `t_k = k * dt` is a batch of events drained in
//! `(time, phase, agent, sequence)` order:
//!
//! 1. `Publish`: an agent senses the world, encodes its observation and
//!    publishes the latent on `msg/<id>`.
//! 2. `Evaluate`: it drains deliveries into its cache, evaluates the policy
//!    on the fresh in-range messages and hands the command to its controller.
//!
//! The world integrates at `t_{k+1}` with the commands in effect. With
//! aligned clocks every agent ticks at `t_k`, so all publishes precede all
//! evaluations; otherwise agent `i` ticks at `t_k + phase_i`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;

use super::cache::MessageCache;
use super::mode::ModeConfig;
use super::trace::{AgentRecord, EpisodeTrace, TickRecord, TraceFooter, TraceHeader, TRACE_SCHEMA};
use crate::geom::Vec2;
use crate::policy::{build_observation, encode, evaluate_centralized, evaluate_local, Action, Message, Observation, PolicyWeights};
use crate::rng::keyed_rng;
use crate::transport::{Datagram, EmuTransport, PhysicalCounts, Topic, Transport};
use crate::world::{
    check_termination, compute_neighborhood, detect_agent_collisions, resolve_wall_collision, spawn_scenario,
    step_dynamics, AgentKinematics, CommConfig, EpisodeStatus, NeighborhoodGraph, ScenarioSpec, WorldConfig,
};
use crate::{AgentId, Error, Result};

/// Evaluator id used for the single centralized evaluator.
pub const CENTRAL: AgentId = AgentId(u32::MAX - 1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Publish,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventKey {
    pub time: f64,
    pub phase: Phase,
    pub agent: AgentId,
    pub seq: u64,
}

impl Eq for EventKey {}

impl Ord for EventKey {
    fn cmp(&self, o: &Self) -> Ordering {
        self.time
            .total_cmp(&o.time)
            .then(self.phase.cmp(&o.phase))
            .then(self.agent.cmp(&o.agent))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Min-queue of events in a deterministic total order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<EventKey>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, phase: Phase, agent: AgentId) {
        self.heap.push(Reverse(EventKey {
            time,
            phase,
            agent,
            seq: self.next_seq,
        }));
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<EventKey> {
        self.heap.pop().map(|r| r.0)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One agent's cache, control state and message bookkeeping.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: AgentId,
    pub cache: MessageCache,
    /// Command currently handed to the controller.
    pub command: Vec2,
    /// Offset of this agent's policy clock within the tick.
    pub phase: f64,
    sent: u32,
    delivered: u32,
}

impl AgentRuntime {
    pub fn new(id: AgentId, cache_window: f64, phase: f64) -> Self {
        Self {
            id,
            cache: MessageCache::new(cache_window),
            command: [0.0; 2],
            phase,
            sent: 0,
            delivered: 0,
        }
    }

    /// Encodes the sensed state and publishes the latent. A missing sensor
    /// reading skips the publish.
    pub fn publish(
        &mut self,
        w: &PolicyWeights,
        sensor: Option<&AgentKinematics>,
        transport: &mut dyn Transport,
        now: f64,
    ) -> Result<Option<Message>> {
        let Some(s) = sensor else {
            log::warn!("agent {}: no sensor state at t={now:.3}, skipping publish", self.id);
            return Ok(None);
        };
        let msg = Message {
            sender: self.id,
            timestamp: now,
            payload: encode(w, &observe(s))?,
        };
        transport.publish(self.id, Topic::Msg(self.id), msg.payload_bytes(), now)?;
        self.sent += 1;
        Ok(Some(msg))
    }

    /// Moves every delivered message into the cache.
    pub fn receive(&mut self, transport: &mut dyn Transport, now: f64) -> Result<usize> {
        let datagrams = transport.poll(self.id, now)?;
        let n = datagrams.len();
        for d in &datagrams {
            self.accept(d)?;
        }
        Ok(n)
    }

    /// Caches one delivered latent message.
    pub fn accept(&mut self, d: &Datagram) -> Result<()> {
        let msg = Message {
            sender: d.sender,
            timestamp: d.sent_at,
            payload: Message::payload_from_bytes(&d.payload)?,
        };
        self.cache.update(msg, d.delivered_at);
        self.delivered += 1;
        Ok(())
    }

    /// One policy evaluation from the cache, restricted to `neighbors`.
    /// Without a sensor reading the previous command is held.
    pub fn tick(
        &mut self,
        w: &PolicyWeights,
        sensor: Option<&AgentKinematics>,
        neighbors: &[AgentId],
        now: f64,
    ) -> Result<(Action, Option<Message>)> {
        let Some(s) = sensor else {
            log::warn!("agent {}: no sensor state at t={now:.3}, holding last command", self.id);
            return Ok((Action { v_d: self.command }, None));
        };
        let msgs = self.cache.snapshot_filtered(now, |a| neighbors.binary_search(&a).is_ok());
        let (action, out) = evaluate_local(w, self.id, now, &observe(s), &msgs)?;
        self.command = action.v_d;
        Ok((action, Some(out)))
    }

    /// Messages sent and received since the last call.
    pub fn take_counters(&mut self) -> (u32, u32) {
        let c = (self.sent, self.delivered);
        self.sent = 0;
        self.delivered = 0;
        c
    }
}

pub fn observe(s: &AgentKinematics) -> Observation {
    build_observation(s.p, s.v_m, s.p_g)
}

/// Where and when an episode sits in an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSetup {
    pub index: usize,
    pub repetition: usize,
    pub episode: usize,
    pub seed: u64,
    pub starts: Vec<Vec2>,
    pub goals: Vec<Vec2>,
}

/// Simulated world of one episode plus its recorded ticks. A driver calls
/// [`sense`](Self::sense) at `t_k`, decides commands, then either
/// [`advance`](Self::advance)s to `t_{k+1}` or [`end`](Self::end)s the episode.
#[derive(Debug, Clone)]
pub struct EpisodeWorld<'a> {
    world: &'a WorldConfig,
    comm: &'a CommConfig,
    ids: Vec<AgentId>,
    states: Vec<AgentKinematics>,
    collision_now: Vec<bool>,
    contact_now: Vec<bool>,
    latched: bool,
    tick: u64,
    ticks: Vec<TickRecord>,
    status: EpisodeStatus,
}

impl<'a> EpisodeWorld<'a> {
    /// Agents `0..n` at rest on `starts`.
    pub fn new(world: &'a WorldConfig, comm: &'a CommConfig, starts: &[Vec2], goals: &[Vec2]) -> Result<Self> {
        world.validate()?;
        comm.validate()?;
        let n = starts.len();
        if n == 0 || goals.len() != n {
            return Err(Error::validation(format!(
                "episode needs matching starts and goals, got {} and {}",
                n,
                goals.len()
            )));
        }
        let ids: Vec<AgentId> = (0..n as u32).map(AgentId).collect();
        let states: Vec<AgentKinematics> = ids
            .iter()
            .map(|&id| {
                let i = id.0 as usize;
                AgentKinematics::at_rest(id, starts[i], goals[i], world.agent_radius)
            })
            .collect();
        let collisions = detect_agent_collisions(&states, world.thresholds.agent_collision);
        let mut collision_now = vec![false; n];
        for (a, b) in &collisions {
            collision_now[a.0 as usize] = true;
            collision_now[b.0 as usize] = true;
        }
        Ok(Self {
            world,
            comm,
            ids,
            states,
            collision_now,
            contact_now: vec![false; n],
            latched: !collisions.is_empty(),
            tick: 0,
            ticks: Vec::new(),
            status: EpisodeStatus::Running,
        })
    }

    pub fn ids(&self) -> &[AgentId] {
        &self.ids
    }

    pub fn states(&self) -> &[AgentKinematics] {
        &self.states
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    /// Episode time, neighbourhood and termination status at the current tick.
    pub fn sense(&self) -> (f64, NeighborhoodGraph, EpisodeStatus) {
        let t = self.tick as f64 * self.world.dt;
        let positions: Vec<Vec2> = self.states.iter().map(|s| s.p).collect();
        let graph = compute_neighborhood(&self.ids, &positions, self.comm, self.tick);
        let status = check_termination(&self.states, self.world, t, self.latched);
        (t, graph, status)
    }

    /// Records the final tick (no action) with the terminal `status`.
    pub fn end(&mut self, status: EpisodeStatus, graph: &NeighborhoodGraph, counters: &[(u32, u32)]) {
        let t = self.tick as f64 * self.world.dt;
        self.status = status;
        self.record(t, graph, None, counters);
    }

    /// Records the current tick with the `decided` actions, then integrates
    /// to the next tick with the `applied` commands.
    pub fn advance(
        &mut self,
        graph: &NeighborhoodGraph,
        decided: &[Vec2],
        applied: &[Vec2],
        counters: &[(u32, u32)],
    ) -> Result<()> {
        let t = self.tick as f64 * self.world.dt;
        self.record(t, graph, Some(decided), counters);
        for i in 0..self.states.len() {
            let before = self.states[i];
            let after = step_dynamics(&before, Action { v_d: applied[i] }, self.world)?;
            let (after, contact) = resolve_wall_collision(&before, after, self.world);
            self.states[i] = after;
            self.contact_now[i] = contact;
            self.latched |= contact;
        }
        self.collision_now.iter_mut().for_each(|c| *c = false);
        for (a, b) in detect_agent_collisions(&self.states, self.world.thresholds.agent_collision) {
            self.collision_now[a.0 as usize] = true;
            self.collision_now[b.0 as usize] = true;
            self.latched = true;
        }
        self.tick += 1;
        Ok(())
    }

    fn record(&mut self, t: f64, graph: &NeighborhoodGraph, decided: Option<&[Vec2]>, counters: &[(u32, u32)]) {
        let agents = (0..self.states.len())
            .map(|i| {
                let s = &self.states[i];
                let (sent, delivered) = counters.get(i).copied().unwrap_or_default();
                AgentRecord {
                    agent: s.id,
                    p: s.p,
                    v_m: s.v_m,
                    a_d: s.a_d,
                    action: decided.map(|d| d[i]),
                    neighbors: graph.in_neighbors(i),
                    sent,
                    delivered,
                    collision: self.collision_now[i],
                    wall_contact: self.contact_now[i],
                }
            })
            .collect();
        self.ticks.push(TickRecord {
            tick: self.tick,
            t,
            agents,
        });
    }

    pub fn into_trace(self, header: TraceHeader, pauses: u32, network: PhysicalCounts) -> EpisodeTrace {
        EpisodeTrace {
            footer: TraceFooter {
                status: self.status,
                ticks: self.ticks.len() as u64,
                collision_flagged: self.latched,
                pauses,
                network,
            },
            header,
            ticks: self.ticks,
        }
    }
}

/// Trace header for an episode of `mode` in `world`.
pub fn trace_header(mode: &ModeConfig, world: &WorldConfig, setup: &EpisodeSetup) -> TraceHeader {
    TraceHeader {
        schema: TRACE_SCHEMA,
        index: setup.index,
        repetition: setup.repetition,
        episode: setup.episode,
        seed: setup.seed,
        mode: mode.variant.name().to_string(),
        preset: mode.preset.name.clone(),
        agents: (0..setup.starts.len() as u32).map(AgentId).collect(),
        starts: setup.starts.clone(),
        goals: setup.goals.clone(),
        world: world.clone(),
    }
}

/// Steps one episode tick by tick so an orchestrator can pause it.
pub struct EpisodeRunner<'a> {
    mode: &'a ModeConfig,
    weights: &'a PolicyWeights,
    header: TraceHeader,
    sim: EpisodeWorld<'a>,
    agents: Vec<AgentRuntime>,
    transport: EmuTransport,
    load: f64,
    /// Centralized commands in flight: (arrival time, one command per agent).
    in_flight: Vec<(f64, Vec<Vec2>)>,
    commands: Vec<Vec2>,
    pauses: u32,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(
        mode: &'a ModeConfig,
        world: &'a WorldConfig,
        comm: &'a CommConfig,
        weights: &'a PolicyWeights,
        setup: EpisodeSetup,
    ) -> Result<Self> {
        mode.validate()?;
        weights.validate()?;
        let sim = EpisodeWorld::new(world, comm, &setup.starts, &setup.goals)?;
        let ids = sim.ids().to_vec();
        let n = ids.len();
        let agents = ids
            .iter()
            .map(|&id| {
                let phase = if mode.aligned {
                    0.0
                } else {
                    keyed_rng(&[setup.seed, 0x9A5E, id.0 as u64]).random::<f64>() * world.dt
                };
                AgentRuntime::new(id, mode.cache_window, phase)
            })
            .collect();
        let load = mode.offered_load(n, world.dt);
        let mut transport = EmuTransport::new(mode.preset.clone().with_seed(setup.seed), load);
        if !mode.variant.is_synchronous() {
            for &i in &ids {
                for &j in &ids {
                    if i != j {
                        transport.subscribe(j, Topic::Msg(i))?;
                    }
                }
            }
        }
        Ok(Self {
            mode,
            weights,
            header: trace_header(mode, world, &setup),
            sim,
            agents,
            transport,
            load,
            in_flight: Vec::new(),
            commands: vec![[0.0; 2]; n],
            pauses: 0,
        })
    }

    pub fn status(&self) -> EpisodeStatus {
        self.sim.status()
    }

    pub fn tick_index(&self) -> u64 {
        self.sim.tick_index()
    }

    pub fn states(&self) -> &[AgentKinematics] {
        self.sim.states()
    }

    pub fn note_pause(&mut self) {
        self.pauses += 1;
    }

    fn take_counters(&mut self) -> Vec<(u32, u32)> {
        self.agents.iter_mut().map(AgentRuntime::take_counters).collect()
    }

    /// Runs tick `k`: policies act on the state at `t_k` and the world
    /// advances to `t_{k+1}`. Returns the status at `t_k`; once it is done
    /// the final tick has been recorded and further calls do nothing.
    pub fn step(&mut self) -> Result<EpisodeStatus> {
        if self.sim.status().is_done() {
            return Ok(self.sim.status());
        }
        let (t, graph, status) = self.sim.sense();
        if status.is_done() {
            let counters = self.take_counters();
            self.sim.end(status, &graph, &counters);
            return Ok(status);
        }
        let decided = if self.mode.variant.is_synchronous() {
            self.central_tick(t, &graph)?
        } else {
            self.agent_events(t, &graph)?
        };
        if self.mode.variant.is_synchronous() {
            self.deliver_central(t + self.sim.world.dt);
        }
        let counters = self.take_counters();
        self.sim.advance(&graph, &decided, &self.commands, &counters)?;
        Ok(EpisodeStatus::Running)
    }

    fn central_tick(&mut self, t: f64, graph: &NeighborhoodGraph) -> Result<Vec<Vec2>> {
        let obs: Vec<Observation> = self.sim.states().iter().map(observe).collect();
        let actions: Vec<Vec2> = evaluate_centralized(self.weights, &obs, graph)?
            .into_iter()
            .map(|a| a.v_d)
            .collect();
        let mut rng = keyed_rng(&[self.header.seed, 0xAC7, self.sim.tick_index()]);
        let delay = self.mode.preset.model.sample_delay_s(self.load, &mut rng);
        self.in_flight.push((t + delay, actions.clone()));
        Ok(actions)
    }

    /// Centralized commands that have arrived by `t_next` take effect.
    fn deliver_central(&mut self, t_next: f64) {
        let eps = 1e-9 * self.sim.world.dt;
        let mut keep = Vec::new();
        for (arrival, cmds) in self.in_flight.drain(..) {
            if arrival <= t_next + eps {
                self.commands = cmds;
            } else {
                keep.push((arrival, cmds));
            }
        }
        self.in_flight = keep;
    }

    fn agent_events(&mut self, t: f64, graph: &NeighborhoodGraph) -> Result<Vec<Vec2>> {
        let mut queue = EventQueue::new();
        for a in &self.agents {
            queue.push(t + a.phase, Phase::Publish, a.id);
            queue.push(t + a.phase, Phase::Evaluate, a.id);
        }
        let mut decided = self.commands.clone();
        while let Some(ev) = queue.pop() {
            let i = ev.agent.0 as usize;
            let sensor = Some(&self.sim.states()[i]);
            let agent = &mut self.agents[i];
            match ev.phase {
                Phase::Publish => {
                    agent.publish(self.weights, sensor, &mut self.transport, ev.time)?;
                }
                Phase::Evaluate => {
                    agent.receive(&mut self.transport, ev.time)?;
                    let neighbors = graph.in_neighbors(i);
                    let (action, _) = agent.tick(self.weights, sensor, &neighbors, ev.time)?;
                    decided[i] = action.v_d;
                    self.commands[i] = action.v_d;
                    agent.cache.evict(ev.time);
                }
            }
        }
        Ok(decided)
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<EpisodeTrace> {
        while !self.step()?.is_done() {}
        Ok(self.finish())
    }

    pub fn finish(mut self) -> EpisodeTrace {
        self.transport.close();
        let network = self.transport.counts();
        self.sim.into_trace(self.header, self.pauses, network)
    }
}

/// First episode of `scenario` under `mode`.
pub fn run_episode(
    mode: &ModeConfig,
    scenario: &ScenarioSpec,
    weights: &PolicyWeights,
    seed: u64,
) -> Result<EpisodeTrace> {
    scenario.validate()?;
    let (starts, goals) = spawn_scenario(scenario, 0, None)?;
    let setup = EpisodeSetup {
        index: 0,
        repetition: 0,
        episode: 0,
        seed,
        starts,
        goals,
    };
    EpisodeRunner::new(mode, &scenario.world, &scenario.comm, weights, setup)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::ModeVariant;
    use crate::policy::{random_weights, reference_weights, PolicyDims, ReferenceGains};
    use crate::transport::TransportPreset;

    fn offboard() -> ModeConfig {
        ModeConfig::preset(ModeVariant::Offboard).unwrap()
    }

    #[test]
    fn event_order_is_time_phase_agent_seq() {
        let mut q = EventQueue::new();
        q.push(0.1, Phase::Evaluate, AgentId(0));
        q.push(0.1, Phase::Publish, AgentId(2));
        q.push(0.0, Phase::Evaluate, AgentId(5));
        q.push(0.1, Phase::Publish, AgentId(1));
        let order: Vec<(f64, Phase, u32)> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.phase, e.agent.0))
            .collect();
        assert_eq!(
            order,
            vec![
                (0.0, Phase::Evaluate, 5),
                (0.1, Phase::Publish, 1),
                (0.1, Phase::Publish, 2),
                (0.1, Phase::Evaluate, 0)
            ]
        );
    }

    #[test]
    fn starting_at_goals_ends_immediately() {
        let mut s = ScenarioSpec::passage(3, 2).unwrap();
        s.goal_sets[0] = s.starts.clone();
        let w = random_weights(1, &PolicyDims::default()).unwrap();
        let tr = run_episode(&offboard(), &s, &w, 0).unwrap();
        assert_eq!(tr.footer.status, EpisodeStatus::AllAtGoal { makespan: 0.0 });
        assert_eq!(tr.ticks.len(), 1);
        assert!(tr.ticks[0].agents.iter().all(|a| a.action.is_none()));
    }

    #[test]
    fn trace_length_is_bounded_by_timeout() {
        let mut s = ScenarioSpec::passage(2, 2).unwrap();
        s.world.timeout = 2.0;
        let w = random_weights(3, &PolicyDims::default()).unwrap();
        let tr = run_episode(&offboard(), &s, &w, 0).unwrap();
        assert!(tr.ticks.len() as f64 <= s.world.timeout / s.world.dt + 1.0 + 1e-9);
        assert!(tr.footer.status.is_done());
        assert!(tr.ticks.windows(2).all(|p| p[1].t > p[0].t));
    }

    #[test]
    fn lone_agent_with_reference_policy_reaches_goal() {
        let mut s = ScenarioSpec::circle_swap(1, 1.5, 2).unwrap();
        s.world.timeout = 20.0;
        let w = reference_weights(&ReferenceGains::default()).unwrap();
        let tr = run_episode(&offboard(), &s, &w, 0).unwrap();
        assert!(matches!(tr.footer.status, EpisodeStatus::AllAtGoal { .. }), "{:?}", tr.footer);
    }

    #[test]
    fn missing_sensor_holds_command_and_skips_publish() {
        let w = random_weights(2, &PolicyDims::default()).unwrap();
        let mut t = EmuTransport::new(TransportPreset::builtin("ideal").unwrap(), 10.0);
        t.subscribe(AgentId(1), Topic::Msg(AgentId(0))).unwrap();
        let mut a = AgentRuntime::new(AgentId(0), 0.2, 0.0);
        a.command = [0.3, -0.1];
        assert!(a.publish(&w, None, &mut t, 0.0).unwrap().is_none());
        let (act, out) = a.tick(&w, None, &[], 0.0).unwrap();
        assert_eq!(act.v_d, [0.3, -0.1]);
        assert!(out.is_none());
        assert!(t.poll(AgentId(1), 1.0).unwrap().is_empty());
    }

    #[test]
    fn stale_only_cache_matches_empty_cache() {
        let w = random_weights(4, &PolicyDims::default()).unwrap();
        let s = AgentKinematics::at_rest(AgentId(0), [0.5, 0.5], [2.0, 0.0], 0.16);
        let mut fresh = AgentRuntime::new(AgentId(0), 0.2, 0.0);
        let mut stale = fresh.clone();
        stale.cache.update(
            Message {
                sender: AgentId(1),
                timestamp: 0.0,
                payload: encode(&w, &build_observation([1.0, 0.0], [0.0; 2], [0.0; 2])).unwrap(),
            },
            0.0,
        );
        let (a, _) = fresh.tick(&w, Some(&s), &[AgentId(1)], 1.0).unwrap();
        let (b, _) = stale.tick(&w, Some(&s), &[AgentId(1)], 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unaligned_clocks_still_terminate_deterministically() {
        let s = ScenarioSpec::passage(3, 2).unwrap();
        let mut mode = ModeConfig::preset(ModeVariant::OnboardAdhoc).unwrap();
        mode.aligned = false;
        let w = random_weights(5, &PolicyDims::default()).unwrap();
        let a = run_episode(&mode, &s, &w, 9).unwrap();
        let b = run_episode(&mode, &s, &w, 9).unwrap();
        assert_eq!(a.to_ndjson(), b.to_ndjson());
        assert!(a.footer.network.messages > 0);
    }
}
