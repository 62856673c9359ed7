//! Episode traces and their newline-delimited JSON form.
//!
//! A trace file is a header line, one line per agent per tick, and a footer
//! line. Every line is a JSON object tagged by `"kind"`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::transport::PhysicalCounts;
use crate::world::{EpisodeStatus, WorldConfig};
use crate::{AgentId, Error, Result};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: u32,
    /// Position in the experiment, `repetition * E + episode`.
    pub index: usize,
    pub repetition: usize,
    pub episode: usize,
    pub seed: u64,
    pub mode: String,
    pub preset: String,
    pub agents: Vec<AgentId>,
    pub starts: Vec<Vec2>,
    pub goals: Vec<Vec2>,
    pub world: WorldConfig,
}

impl TraceHeader {
    /// Reference point for distance-to-origin metrics: the passage centre,
    /// or the arena origin without a wall.
    pub fn origin(&self) -> Vec2 {
        self.world.wall.map(|w| w.passage_point()).unwrap_or([0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent: AgentId,
    pub p: Vec2,
    pub v_m: Vec2,
    pub a_d: Vec2,
    /// Command decided this tick; absent on the final tick.
    pub action: Option<Vec2>,
    pub neighbors: Vec<AgentId>,
    /// Messages this agent published this tick.
    pub sent: u32,
    /// Messages delivered to this agent since its previous tick.
    pub delivered: u32,
    /// Closer than the collision threshold to another agent.
    pub collision: bool,
    /// The step into this tick was reverted at a wall or the arena bounds.
    pub wall_contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub status: EpisodeStatus,
    pub ticks: u64,
    pub collision_flagged: bool,
    /// Times the episode was paused by missing heartbeats.
    pub pauses: u32,
    pub network: PhysicalCounts,
}

impl TraceFooter {
    pub fn makespan(&self) -> Option<f64> {
        match self.status {
            EpisodeStatus::AllAtGoal { makespan } => Some(makespan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub ticks: Vec<TickRecord>,
    pub footer: TraceFooter,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Tick {
        tick: u64,
        t: f64,
        #[serde(flatten)]
        agent: AgentRecord,
    },
    Footer(TraceFooter),
}

impl EpisodeTrace {
    pub fn file_name(&self) -> String {
        format!(
            "trace_r{:02}_e{:02}.ndjson",
            self.header.repetition, self.header.episode
        )
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        let line = |out: &mut dyn Write, l: &Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, l)?;
            out.write_all(b"\n")
        };
        line(out, &Line::Header(self.header.clone()))?;
        for tr in &self.ticks {
            for a in &tr.agents {
                line(
                    out,
                    &Line::Tick {
                        tick: tr.tick,
                        t: tr.t,
                        agent: a.clone(),
                    },
                )?;
            }
        }
        line(out, &Line::Footer(self.footer.clone()))
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut footer = None;
        let mut ticks: Vec<TickRecord> = Vec::new();
        let mut offset = 0usize;
        for line in r.lines() {
            let line = line.map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })?;
            let at = offset;
            offset += line.len() + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                offset: at + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            let bad = |m: &str| Error::Parse {
                offset: at,
                message: m.to_string(),
            };
            match parsed {
                Line::Header(h) => {
                    if header.is_some() {
                        return Err(bad("second trace header"));
                    }
                    if h.schema != TRACE_SCHEMA {
                        return Err(bad(&format!("unsupported trace schema {}", h.schema)));
                    }
                    header = Some(h);
                }
                Line::Tick { tick, t, agent } => {
                    if header.is_none() || footer.is_some() {
                        return Err(bad("tick record outside header/footer"));
                    }
                    match ticks.last_mut() {
                        Some(last) if last.tick == tick => last.agents.push(agent),
                        Some(last) if tick <= last.tick || t <= last.t => {
                            return Err(bad("tick times must increase"));
                        }
                        _ => ticks.push(TickRecord {
                            tick,
                            t,
                            agents: vec![agent],
                        }),
                    }
                }
                Line::Footer(f) => {
                    if footer.is_some() {
                        return Err(bad("second trace footer"));
                    }
                    footer = Some(f);
                }
            }
        }
        let header = header.ok_or_else(|| Error::Parse {
            offset: 0,
            message: "trace has no header".into(),
        })?;
        let footer = footer.ok_or_else(|| Error::Parse {
            offset,
            message: "trace has no footer (truncated?)".into(),
        })?;
        Ok(Self {
            header,
            ticks,
            footer,
        })
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn is_collision_flagged(&self) -> bool {
        self.footer.collision_flagged || matches!(self.footer.status, EpisodeStatus::CollisionFlagged)
    }
}

/// Loads every `*.ndjson` trace in `dir`, ordered by experiment index.
/// Files are parsed in parallel.
pub fn load_trace_dir(dir: impl AsRef<Path>) -> Result<Vec<EpisodeTrace>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "ndjson") {
            paths.push(p);
        }
    }
    paths.sort();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(paths.len().max(1));
    let chunk = paths.len().div_ceil(workers).max(1);
    let parsed: Vec<Result<Vec<EpisodeTrace>>> = std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(EpisodeTrace::load).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("trace parser panicked")).collect()
    });
    let mut traces = Vec::with_capacity(paths.len());
    for part in parsed {
        traces.extend(part?);
    }
    traces.sort_by_key(|t| t.header.index);
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_trace() -> EpisodeTrace {
        let rec = |id: u32, x: f64| AgentRecord {
            agent: AgentId(id),
            p: [x, 0.0],
            v_m: [0.1, 0.0],
            a_d: [1.0, 0.0],
            action: Some([1.0, 0.0]),
            neighbors: vec![AgentId(1 - id)],
            sent: 1,
            delivered: 1,
            collision: false,
            wall_contact: false,
        };
        EpisodeTrace {
            header: TraceHeader {
                schema: TRACE_SCHEMA,
                index: 0,
                repetition: 0,
                episode: 0,
                seed: 7,
                mode: "offboard".into(),
                preset: "ideal".into(),
                agents: vec![AgentId(0), AgentId(1)],
                starts: vec![[-1.0, 0.0], [1.0, 0.0]],
                goals: vec![[-1.0, 1.0], [1.0, 1.0]],
                world: WorldConfig::default(),
            },
            ticks: (0..3)
                .map(|k| TickRecord {
                    tick: k,
                    t: k as f64 * 0.1,
                    agents: vec![rec(0, -1.0), rec(1, 1.0 + 0.1 * k as f64)],
                })
                .collect(),
            footer: TraceFooter {
                status: EpisodeStatus::TimedOut,
                ticks: 3,
                collision_flagged: false,
                pauses: 0,
                network: PhysicalCounts::default(),
            },
        }
    }

    #[test]
    fn ndjson_round_trip() {
        let t = tiny_trace();
        let text = t.to_ndjson();
        assert_eq!(text.lines().count(), 1 + 6 + 1);
        assert!(text.starts_with("{\"kind\":\"header\""));
        let back = EpisodeTrace::from_ndjson(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_ndjson(), text);
    }

    #[test]
    fn truncated_trace_is_a_parse_error() {
        let text = tiny_trace().to_ndjson();
        let cut: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(matches!(EpisodeTrace::from_ndjson(&cut), Err(Error::Parse { .. })));
        let garbled = text.replacen("\"tick\":1", "\"tick\":}", 1);
        assert!(matches!(EpisodeTrace::from_ndjson(&garbled), Err(Error::Parse { .. })));
    }

    #[test]
    fn non_increasing_ticks_are_rejected() {
        let mut t = tiny_trace();
        t.ticks[2].t = 0.05;
        assert!(EpisodeTrace::from_ndjson(&t.to_ndjson()).is_err());
    }

    #[test]
    fn directory_load_orders_by_index() {
        let dir = tempfile::tempdir().unwrap();
        for (i, e) in [(1usize, 1usize), (0, 0)] {
            let mut t = tiny_trace();
            t.header.index = i;
            t.header.episode = e;
            t.save(dir.path().join(t.file_name())).unwrap();
        }
        let all = load_trace_dir(dir.path()).unwrap();
        assert_eq!(all.iter().map(|t| t.header.index).collect::<Vec<_>>(), vec![0, 1]);
    }
}
