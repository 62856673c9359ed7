//! Wall-clock execution over the real UDP backend.
//!
//! The state server, the simulated world and every agent run as separate
//! threads, each owning one UDP endpoint. They share nothing but topics:
//!
//! * `sensor/<i>`: world to agent `i`, sensed state plus current neighbours;
//! * `cmd/<i>`: agent `i` to world, velocity command;
//! * `msg/<i>`: agent `i` to its peers, latent message;
//! * `sm` / `am`: server broadcasts; heartbeats, placement acks and episode
//!   ends.
//!
//! Agents tick on their own 10 Hz clocks with free phases. The world
//! integrates on its own 10 Hz clock with the latest command it holds per
//! agent, so traces are not reproducible run to run.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{trace_header, AgentRuntime, EpisodeSetup, EpisodeWorld};
use super::experiment::{decode, drive_to_start, encode, ExperimentPlan, SERVER};
use super::mode::ModeConfig;
use super::server::{AgentReport, Broadcast, EpisodeConditions, ServerState, StateServer, Transition};
use super::trace::EpisodeTrace;
use crate::geom::Vec2;
use crate::policy::PolicyWeights;
use crate::rng::keyed_rng;
use crate::transport::{HostClock, PhysicalCounts, Topic, Transport, UdpConfig, UdpEndpoint, UdpStats, UdpTransport};
use crate::world::{AgentKinematics, EpisodeStatus, NeighborhoodGraph, ScenarioSpec};
use crate::{AgentId, Error, Result};

/// Endpoint of the simulated world.
pub const WORLD: AgentId = AgentId(u32::MAX - 3);

/// How often the server repeats its current broadcast, s.
const REANNOUNCE: f64 = 0.25;
const IDLE: Duration = Duration::from_micros(500);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SensorReading {
    episode: usize,
    tick: u64,
    state: AgentKinematics,
    neighbors: Vec<AgentId>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Command {
    episode: usize,
    v_d: Vec2,
    sent: u32,
    delivered: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallClockOptions {
    pub udp: UdpConfig,
    /// Give up if the experiment is still running after this long.
    pub limit: Duration,
}

impl WallClockOptions {
    /// Socket settings taken from the mode's preset: delivery mode, ack
    /// timeout, and its loss at the mode's offered load injected on `msg/*`.
    pub fn for_mode(mode: &ModeConfig, agents: usize, dt: f64, seed: u64) -> Self {
        let mut udp = UdpConfig::new(mode.preset.mode);
        udp.ack_timeout_ms = mode.preset.ack_timeout_ms;
        udp.injected_loss = mode.preset.model.loss_at(mode.offered_load(agents, dt));
        udp.seed = seed;
        Self {
            udp,
            limit: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WallClockOutcome {
    pub traces: Vec<EpisodeTrace>,
    pub final_state: ServerState,
    pub transitions: Vec<Transition>,
    /// Packet counters summed over every endpoint.
    pub stats: UdpStats,
}

/// Read-only context every activity gets.
struct Context<'a> {
    plan: &'a ExperimentPlan,
    mode: &'a ModeConfig,
    spec: &'a ScenarioSpec,
    weights: &'a PolicyWeights,
    conditions: &'a [EpisodeConditions],
    ids: &'a [AgentId],
    clock: HostClock,
    stop: &'a AtomicBool,
}

impl Context<'_> {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }
}

fn publish<T: Serialize>(ep: &mut UdpEndpoint, topic: Topic, v: &T) -> Result<()> {
    let id = ep.id();
    ep.publish(id, topic, encode(v), 0.0).map(|_| ())
}

fn serve(ctx: &Context, mut ep: UdpEndpoint, mut server: StateServer) -> Result<(ServerState, Vec<Transition>, UdpStats)> {
    let mut ended: Option<(usize, EpisodeStatus)> = None;
    let mut announced = f64::NEG_INFINITY;
    while !ctx.stopped() {
        let now = ctx.clock.now_s();
        let mut reports = Vec::new();
        for d in ep.poll(SERVER, now)? {
            match decode::<AgentReport>(&d.payload)? {
                AgentReport::EpisodeEnded { episode, status } => ended = Some((episode, status)),
                r => reports.push(r),
            }
        }
        let status = ended.filter(|(e, _)| *e == server.episode()).map(|(_, s)| s);
        let (state, changed) = server.step(&reports, status, now);
        if changed.is_some() || now - announced >= REANNOUNCE {
            publish(&mut ep, Topic::StateMachine, &server.announce())?;
            announced = now;
        }
        if state == ServerState::Finished {
            for _ in 0..3 {
                std::thread::sleep(Duration::from_millis(20));
                publish(&mut ep, Topic::StateMachine, &server.announce())?;
            }
            return Ok((state, server.transitions().to_vec(), ep.stats()));
        }
        std::thread::sleep(IDLE);
    }
    Err(Error::Transport("wall-clock experiment aborted".into()))
}

/// The episode the world is currently simulating.
struct Live<'a> {
    index: usize,
    sim: EpisodeWorld<'a>,
    setup: EpisodeSetup,
    graph: NeighborhoodGraph,
    opening: EpisodeStatus,
    commands: Vec<Vec2>,
    counters: Vec<(u32, u32)>,
    /// Host time of tick 0, shifted forward by pauses.
    origin: f64,
    running: bool,
    pauses: u32,
}

fn send_sensors(ep: &mut UdpEndpoint, live: &Live) -> Result<()> {
    for (i, s) in live.sim.states().iter().enumerate() {
        let reading = SensorReading {
            episode: live.index,
            tick: live.sim.tick_index(),
            state: *s,
            neighbors: live.graph.in_neighbors(i),
        };
        publish(ep, Topic::Sensor(s.id), &reading)?;
    }
    Ok(())
}

fn simulate(ctx: &Context, mut ep: UdpEndpoint, out: Option<&Path>) -> Result<(Vec<EpisodeTrace>, UdpStats)> {
    let world = &ctx.spec.world;
    let dt = world.dt;
    let mut traces: Vec<EpisodeTrace> = Vec::new();
    let mut live: Option<Live> = None;
    while !ctx.stopped() {
        let now = ctx.clock.now_s();
        for d in ep.poll(WORLD, now)? {
            match Topic::from_id(d.topic) {
                Some(Topic::StateMachine) => {
                    let b: Broadcast = decode(&d.payload)?;
                    match b.state {
                        ServerState::Resetting if live.as_ref().is_some_and(|l| l.index == b.episode) => {
                            send_sensors(&mut ep, live.as_ref().unwrap())?;
                        }
                        ServerState::Resetting if traces.len() == b.episode => {
                            let c = &ctx.conditions[b.episode];
                            let previous = traces.last().and_then(|t| t.ticks.last());
                            let starts = match previous {
                                Some(last) if ctx.plan.drive_to_start => {
                                    let from: Vec<Vec2> = last.agents.iter().map(|a| a.p).collect();
                                    drive_to_start(&from, &c.starts, world)?
                                }
                                _ => b.starts.clone().unwrap_or_else(|| c.starts.clone()),
                            };
                            let setup = EpisodeSetup {
                                index: b.episode,
                                repetition: b.episode / ctx.plan.e,
                                episode: b.episode % ctx.plan.e,
                                seed: ctx.plan.episode_seed(b.episode),
                                starts,
                                goals: b.goals.clone().unwrap_or_else(|| c.goals.clone()),
                            };
                            let sim = EpisodeWorld::new(world, &ctx.spec.comm, &setup.starts, &setup.goals)?;
                            let (_, graph, opening) = sim.sense();
                            let n = ctx.ids.len();
                            let l = Live {
                                index: b.episode,
                                sim,
                                setup,
                                graph,
                                opening,
                                commands: vec![[0.0; 2]; n],
                                counters: vec![(0, 0); n],
                                origin: now,
                                running: false,
                                pauses: 0,
                            };
                            send_sensors(&mut ep, &l)?;
                            live = Some(l);
                        }
                        ServerState::Running => {
                            if let Some(l) = live.as_mut().filter(|l| l.index == b.episode && !l.running) {
                                l.running = true;
                                l.origin = now - l.sim.tick_index() as f64 * dt;
                            }
                        }
                        ServerState::WaitingForAgents => {
                            if let Some(l) = live.as_mut().filter(|l| l.running) {
                                l.running = false;
                                l.pauses += 1;
                                log::info!("episode {} paused at tick {}", l.index, l.sim.tick_index());
                            }
                        }
                        ServerState::Finished => return Ok((traces, ep.stats())),
                        _ => {}
                    }
                }
                Some(Topic::Cmd(a)) => {
                    let c: Command = decode(&d.payload)?;
                    if let Some(l) = live.as_mut().filter(|l| l.index == c.episode) {
                        let i = a.0 as usize;
                        l.commands[i] = c.v_d;
                        l.counters[i].0 += c.sent;
                        l.counters[i].1 += c.delivered;
                    }
                }
                _ => {}
            }
        }
        let mut finished = false;
        if let Some(l) = live.as_mut().filter(|l| l.running) {
            if l.opening.is_done() {
                l.sim.end(l.opening, &l.graph, &l.counters);
                finished = true;
            } else if now >= l.origin + (l.sim.tick_index() + 1) as f64 * dt {
                let counters = std::mem::replace(&mut l.counters, vec![(0, 0); ctx.ids.len()]);
                l.sim.advance(&l.graph, &l.commands, &l.commands, &counters)?;
                let (_, graph, status) = l.sim.sense();
                l.graph = graph;
                l.opening = status;
                send_sensors(&mut ep, l)?;
            }
        }
        if finished {
            let l = live.take().unwrap();
            let status = l.sim.status();
            publish(
                &mut ep,
                Topic::AgentMode,
                &AgentReport::EpisodeEnded {
                    episode: l.index,
                    status,
                },
            )?;
            let header = trace_header(ctx.mode, world, &l.setup);
            let trace = l.sim.into_trace(header, l.pauses, PhysicalCounts::default());
            if let Some(dir) = out {
                trace.save(dir.join(trace.file_name()))?;
            }
            log::info!("episode {} finished: {:?}", trace.header.index, status);
            traces.push(trace);
        }
        std::thread::sleep(IDLE);
    }
    Err(Error::Transport("wall-clock experiment aborted".into()))
}

fn act(ctx: &Context, mut ep: UdpEndpoint) -> Result<UdpStats> {
    let id = ep.id();
    let dt = ctx.spec.world.dt;
    let period = ctx.plan.server.heartbeat_period;
    let mut rt = AgentRuntime::new(id, ctx.mode.cache_window, 0.0);
    let mut state = ServerState::WaitingForAgents;
    let mut episode = 0usize;
    let mut sensor: Option<SensorReading> = None;
    let mut placed: Option<usize> = None;
    let mut last_beat = f64::NEG_INFINITY;
    let mut silenced: Vec<Option<f64>> = vec![None; ctx.plan.faults.len()];
    let phase = keyed_rng(&[ctx.plan.seed, 0x9A5E, id.0 as u64]).random::<f64>() * dt;
    let mut next_tick = ctx.clock.now_s() + phase;
    while !ctx.stopped() {
        let now = ctx.clock.now_s();
        let quiet = silenced
            .iter()
            .zip(&ctx.plan.faults)
            .any(|(s, f)| s.is_some_and(|s0| now < s0 + f.duration));
        if !quiet && now - last_beat >= period {
            publish(&mut ep, Topic::AgentMode, &AgentReport::Heartbeat { agent: id })?;
            last_beat = now;
        }
        for d in ep.poll(id, now)? {
            match Topic::from_id(d.topic) {
                Some(Topic::StateMachine) => {
                    let b: Broadcast = decode(&d.payload)?;
                    if b.state == ServerState::Finished {
                        return Ok(ep.stats());
                    }
                    if b.state == ServerState::Resetting {
                        if placed == Some(b.episode) {
                            publish(&mut ep, Topic::AgentMode, &AgentReport::Placed { agent: id, episode: b.episode })?;
                        } else if episode != b.episode || state != ServerState::Resetting {
                            rt.cache.clear();
                            sensor = None;
                        }
                    }
                    state = b.state;
                    episode = b.episode;
                }
                Some(Topic::Sensor(_)) => {
                    let r: SensorReading = decode(&d.payload)?;
                    if r.episode != episode {
                        continue;
                    }
                    if state == ServerState::Resetting && r.tick == 0 && placed != Some(episode) {
                        publish(&mut ep, Topic::AgentMode, &AgentReport::Placed { agent: id, episode })?;
                        placed = Some(episode);
                    }
                    for (f, s) in ctx.plan.faults.iter().zip(silenced.iter_mut()) {
                        if s.is_none() && f.agent == id && f.episode_index == episode && r.tick >= f.at_tick {
                            log::info!("agent {id}: silencing heartbeats for {} s", f.duration);
                            *s = Some(now);
                        }
                    }
                    sensor = Some(r);
                }
                Some(Topic::Msg(_)) => rt.accept(&d)?,
                _ => {}
            }
        }
        if now >= next_tick {
            next_tick += dt * ((now - next_tick) / dt).floor().max(0.0) + dt;
            if state == ServerState::Running {
                let s = sensor.as_ref().filter(|r| r.episode == episode);
                rt.publish(ctx.weights, s.map(|r| &r.state), &mut ep, now)?;
                let neighbors = s.map(|r| r.neighbors.clone()).unwrap_or_default();
                let (action, _) = rt.tick(ctx.weights, s.map(|r| &r.state), &neighbors, now)?;
                rt.cache.evict(now);
                let (sent, delivered) = rt.take_counters();
                let cmd = Command {
                    episode,
                    v_d: action.v_d,
                    sent,
                    delivered,
                };
                publish(&mut ep, Topic::Cmd(id), &cmd)?;
            }
        }
        std::thread::sleep(IDLE);
    }
    Ok(ep.stats())
}

fn joined<T>(h: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join().unwrap_or_else(|_| Err(Error::Transport("activity panicked".into())))
}

/// Runs `plan` in real time with one thread per agent, world and server.
/// Only per-agent evaluation modes are supported.
pub fn run_wallclock_experiment(
    plan: &ExperimentPlan,
    opts: &WallClockOptions,
    out: Option<&Path>,
) -> Result<WallClockOutcome> {
    plan.validate()?;
    let spec = plan.scenario_spec()?;
    let weights = plan.weights()?;
    let mode = plan.mode_config()?;
    if mode.variant.is_synchronous() {
        return Err(Error::validation(
            "wall-clock runs need per-agent evaluators; use a decentralized mode",
        ));
    }
    let conditions = plan.conditions(&spec)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ids: Vec<AgentId> = (0..spec.n as u32).map(AgentId).collect();
    let server = StateServer::new(ids.clone(), conditions.clone(), plan.server)?;

    // Every subscription exists before any activity starts publishing.
    let mut net = UdpTransport::new(opts.udp, HostClock::new())?;
    net.subscribe(SERVER, Topic::AgentMode)?;
    net.subscribe(WORLD, Topic::StateMachine)?;
    for &a in &ids {
        net.subscribe(a, Topic::StateMachine)?;
        net.subscribe(a, Topic::Sensor(a))?;
        net.subscribe(WORLD, Topic::Cmd(a))?;
        for &b in &ids {
            if a != b {
                net.subscribe(b, Topic::Msg(a))?;
            }
        }
    }
    let server_ep = net.detach(SERVER)?;
    let world_ep = net.detach(WORLD)?;
    let agent_eps = ids.iter().map(|&a| net.detach(a)).collect::<Result<Vec<_>>>()?;

    let stop = AtomicBool::new(false);
    let ctx = Context {
        plan,
        mode: &mode,
        spec: &spec,
        weights: &weights,
        conditions: &conditions,
        ids: &ids,
        clock: net.clock(),
        stop: &stop,
    };
    let started = Instant::now();
    std::thread::scope(|s| {
        let server = s.spawn(|| serve(&ctx, server_ep, server));
        let world = s.spawn(|| simulate(&ctx, world_ep, out));
        let agents: Vec<_> = agent_eps.into_iter().map(|ep| s.spawn(|| act(&ctx, ep))).collect();
        let wait_for = |done: &dyn Fn() -> bool, limit: Duration| {
            let until = Instant::now() + limit;
            while !done() && Instant::now() < until {
                std::thread::sleep(Duration::from_millis(5));
            }
        };
        loop {
            if server.is_finished() {
                break;
            }
            if started.elapsed() > opts.limit {
                log::error!("wall-clock experiment stopped after {:.1} s", started.elapsed().as_secs_f64());
                break;
            }
            if world.is_finished() || agents.iter().any(|a| a.is_finished()) {
                // Either Finished went out or an activity failed.
                wait_for(&|| server.is_finished(), Duration::from_secs(1));
                break;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        wait_for(
            &|| world.is_finished() && agents.iter().all(|a| a.is_finished()),
            Duration::from_secs(2),
        );
        stop.store(true, Ordering::Relaxed);
        let (traces, world_stats) = joined(world)?;
        let agent_stats = agents.into_iter().map(joined).collect::<Result<Vec<UdpStats>>>()?;
        let (final_state, transitions, mut stats) = joined(server)?;
        stats.merge(&world_stats);
        for a in &agent_stats {
            stats.merge(a);
        }
        Ok(WallClockOutcome {
            traces,
            final_state,
            transitions,
            stats,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{HeartbeatFault, ScenarioSource};
    use crate::transport::TransportMode;
    use crate::world::{Bounds, CommConfig, CommRule, WorldConfig};

    // Relative goals sum to zero, which the reference policy needs.
    fn short_hop_plan(k: usize, e: usize) -> ExperimentPlan {
        let extent = 3.0;
        let spec = ScenarioSpec {
            n: 3,
            starts: vec![[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
            goal_sets: vec![
                vec![[-0.6, 0.0], [0.0, 1.0], [0.6, 0.0]],
                vec![[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
            ],
            chaining: true,
            world: WorldConfig {
                wall: None,
                bounds: Bounds {
                    min: [-extent, -extent],
                    max: [extent, extent],
                },
                timeout: 6.0,
                ..WorldConfig::default()
            },
            comm: CommConfig {
                rule: CommRule::Infinite,
                seed: 0,
            },
        };
        let mut plan = ExperimentPlan::new(k, e, 3, ScenarioSource::Inline(spec));
        plan.mode = "onboard-adhoc".into();
        plan
    }

    fn options(plan: &ExperimentPlan, port: u16) -> WallClockOptions {
        let mode = plan.mode_config().unwrap();
        let mut o = WallClockOptions::for_mode(&mode, 3, 0.1, plan.seed);
        o.udp.mode = TransportMode::Unicast {
            retry_limit: 1,
            positive_acks: true,
        };
        o.udp.group.set_port(port);
        o.limit = Duration::from_secs(60);
        o
    }

    #[test]
    fn wall_clock_experiment_chains_and_finishes() {
        let plan = short_hop_plan(1, 2);
        let out = run_wallclock_experiment(&plan, &options(&plan, 47_301), None).unwrap();
        assert_eq!(out.final_state, ServerState::Finished);
        assert_eq!(out.traces.len(), 2);
        assert_eq!(out.traces[1].header.starts, out.traces[0].header.goals);
        for t in &out.traces {
            assert!(t.footer.makespan().is_some(), "{:?}", t.footer.status);
            assert!(t.ticks.windows(2).all(|w| w[1].tick == w[0].tick + 1));
        }
        assert!(out.stats.received > 0);
    }

    #[test]
    fn wall_clock_heartbeat_loss_pauses_and_resumes() {
        let mut plan = short_hop_plan(1, 1);
        plan.server.heartbeat_period = 0.1;
        plan.server.heartbeat_timeout = 0.3;
        plan.faults.push(HeartbeatFault {
            agent: AgentId(1),
            episode_index: 0,
            at_tick: 2,
            duration: 0.8,
        });
        let out = run_wallclock_experiment(&plan, &options(&plan, 47_302), None).unwrap();
        assert_eq!(out.final_state, ServerState::Finished);
        assert_eq!(out.traces[0].footer.pauses, 1);
        let states: Vec<ServerState> = out.transitions.iter().map(|t| t.to).collect();
        let pause = states
            .windows(2)
            .position(|w| w == [ServerState::WaitingForAgents, ServerState::Running])
            .expect("resumed");
        assert!(pause > 0);
    }

    #[test]
    fn centralized_is_rejected() {
        let mut plan = short_hop_plan(1, 1);
        plan.mode = "centralized".into();
        let o = options(&short_hop_plan(1, 1), 47_303);
        assert!(matches!(run_wallclock_experiment(&plan, &o, None), Err(Error::Validation(_))));
    }
}
