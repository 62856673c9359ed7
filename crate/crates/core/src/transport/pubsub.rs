//! Topic-based publish/poll facade shared by both backends.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::emu::{emu_send, DeliveryRecord, PhysicalCounts, SendKey};
use super::preset::TransportPreset;
use crate::{AgentId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topic {
    /// `msg/<agent>`: latent messages.
    Msg(AgentId),
    /// `cmd/<agent>`: velocity commands.
    Cmd(AgentId),
    /// `sm`: state server to agents.
    StateMachine,
    /// `am`: agents to state server.
    AgentMode,
    /// `sensor/<agent>`: simulated sensor readings, world to agent.
    Sensor(AgentId),
}

const MSG_BASE: u16 = 0x1000;
const CMD_BASE: u16 = 0x2000;
const SENSOR_BASE: u16 = 0x3000;
const AGENT_SPAN: u16 = 0x1000;

impl Topic {
    /// Wire identifier. Agent topics support ids below 4096.
    pub fn id(&self) -> u16 {
        match *self {
            Topic::StateMachine => 1,
            Topic::AgentMode => 2,
            Topic::Msg(a) => MSG_BASE + (a.0 as u16 % AGENT_SPAN),
            Topic::Cmd(a) => CMD_BASE + (a.0 as u16 % AGENT_SPAN),
            Topic::Sensor(a) => SENSOR_BASE + (a.0 as u16 % AGENT_SPAN),
        }
    }

    pub fn from_id(id: u16) -> Option<Topic> {
        match id {
            1 => Some(Topic::StateMachine),
            2 => Some(Topic::AgentMode),
            _ if (MSG_BASE..MSG_BASE + AGENT_SPAN).contains(&id) => {
                Some(Topic::Msg(AgentId((id - MSG_BASE) as u32)))
            }
            _ if (CMD_BASE..CMD_BASE + AGENT_SPAN).contains(&id) => {
                Some(Topic::Cmd(AgentId((id - CMD_BASE) as u32)))
            }
            _ if (SENSOR_BASE..SENSOR_BASE + AGENT_SPAN).contains(&id) => {
                Some(Topic::Sensor(AgentId((id - SENSOR_BASE) as u32)))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topic::Msg(a) => write!(f, "msg/{a}"),
            Topic::Cmd(a) => write!(f, "cmd/{a}"),
            Topic::Sensor(a) => write!(f, "sensor/{a}"),
            Topic::StateMachine => f.write_str("sm"),
            Topic::AgentMode => f.write_str("am"),
        }
    }
}

impl FromStr for Topic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let agent = |rest: &str| {
            rest.parse::<u32>()
                .map(AgentId)
                .map_err(|_| Error::validation(format!("bad agent id in topic '{s}'")))
        };
        match s {
            "sm" => Ok(Topic::StateMachine),
            "am" => Ok(Topic::AgentMode),
            _ => {
                if let Some(rest) = s.strip_prefix("msg/") {
                    Ok(Topic::Msg(agent(rest)?))
                } else if let Some(rest) = s.strip_prefix("cmd/") {
                    Ok(Topic::Cmd(agent(rest)?))
                } else if let Some(rest) = s.strip_prefix("sensor/") {
                    Ok(Topic::Sensor(agent(rest)?))
                } else {
                    Err(Error::validation(format!("unknown topic '{s}'")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datagram {
    pub topic: u16,
    pub sender: AgentId,
    pub sequence: u64,
    pub sent_at: f64,
    pub delivered_at: f64,
    pub payload: Vec<u8>,
}

/// Publish/poll interface. Endpoints are addressed by agent id; each
/// endpoint must only be driven by its owner.
pub trait Transport {
    fn subscribe(&mut self, endpoint: AgentId, topic: Topic) -> Result<()>;

    /// Publishes `payload` on `topic` at time `now` and returns the sequence
    /// number assigned to it.
    fn publish(&mut self, endpoint: AgentId, topic: Topic, payload: Vec<u8>, now: f64) -> Result<u64>;

    /// Everything delivered to `endpoint` by `now`, ordered by delivery time,
    /// then sender, then sequence.
    fn poll(&mut self, endpoint: AgentId, now: f64) -> Result<Vec<Datagram>>;

    fn close(&mut self);
}

#[derive(Debug)]
struct Pending(Datagram);

impl Pending {
    fn key(&self) -> (f64, AgentId, u64, u16) {
        (self.0.delivered_at, self.0.sender, self.0.sequence, self.0.topic)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest delivery.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
    }
}

/// The emulated backend: a virtual medium driven by the caller's clock.
#[derive(Debug)]
pub struct EmuTransport {
    preset: TransportPreset,
    offered_load: f64,
    subscriptions: BTreeMap<Topic, BTreeSet<AgentId>>,
    sequences: HashMap<(AgentId, Topic), u64>,
    inboxes: BTreeMap<AgentId, BinaryHeap<Pending>>,
    log: Vec<DeliveryRecord>,
    counts: PhysicalCounts,
    closed: bool,
}

impl EmuTransport {
    pub fn new(preset: TransportPreset, offered_load: f64) -> Self {
        Self {
            preset,
            offered_load,
            subscriptions: BTreeMap::new(),
            sequences: HashMap::new(),
            inboxes: BTreeMap::new(),
            log: Vec::new(),
            counts: PhysicalCounts::default(),
            closed: false,
        }
    }

    pub fn preset(&self) -> &TransportPreset {
        &self.preset
    }

    pub fn set_offered_load(&mut self, load: f64) {
        self.offered_load = load;
    }

    pub fn delivery_log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn take_delivery_log(&mut self) -> Vec<DeliveryRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn counts(&self) -> PhysicalCounts {
        self.counts
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::Transport("emulated transport is closed".into()))
        } else {
            Ok(())
        }
    }
}

impl Transport for EmuTransport {
    fn subscribe(&mut self, endpoint: AgentId, topic: Topic) -> Result<()> {
        self.ensure_open()?;
        self.subscriptions.entry(topic).or_default().insert(endpoint);
        self.inboxes.entry(endpoint).or_default();
        Ok(())
    }

    fn publish(&mut self, endpoint: AgentId, topic: Topic, payload: Vec<u8>, now: f64) -> Result<u64> {
        self.ensure_open()?;
        let seq = self.sequences.entry((endpoint, topic)).or_insert(0);
        let sequence = *seq;
        *seq += 1;
        let subscribers: Vec<AgentId> = self
            .subscriptions
            .get(&topic)
            .map(|s| s.iter().copied().filter(|&a| a != endpoint).collect())
            .unwrap_or_default();
        let key = SendKey {
            sender: endpoint,
            topic: topic.id(),
            sequence,
            sent_at: now,
        };
        let records = emu_send(
            &self.preset.model,
            &self.preset.mode,
            self.preset.hops,
            &key,
            &subscribers,
            self.offered_load,
            &mut self.counts,
        );
        for r in &records {
            if let Some(t) = r.delivered_at {
                self.inboxes.entry(r.receiver).or_default().push(Pending(Datagram {
                    topic: key.topic,
                    sender: endpoint,
                    sequence,
                    sent_at: now,
                    delivered_at: t,
                    payload: payload.clone(),
                }));
            }
        }
        self.log.extend(records);
        Ok(sequence)
    }

    fn poll(&mut self, endpoint: AgentId, now: f64) -> Result<Vec<Datagram>> {
        self.ensure_open()?;
        let Some(inbox) = self.inboxes.get_mut(&endpoint) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        while inbox.peek().is_some_and(|p| p.0.delivered_at <= now) {
            out.push(inbox.pop().unwrap().0);
        }
        Ok(out)
    }

    fn close(&mut self) {
        self.closed = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::emu::{DelayModel, EmuNetModel};
    use crate::transport::mode::TransportMode;

    fn ideal() -> EmuTransport {
        EmuTransport::new(TransportPreset::builtin("ideal").unwrap(), 50.0)
    }

    #[test]
    fn topic_names_and_ids_round_trip() {
        for t in [
            Topic::Msg(AgentId(3)),
            Topic::Cmd(AgentId(17)),
            Topic::Sensor(AgentId(4)),
            Topic::StateMachine,
            Topic::AgentMode,
        ] {
            assert_eq!(t.to_string().parse::<Topic>().unwrap(), t);
            assert_eq!(Topic::from_id(t.id()), Some(t));
        }
        assert_eq!(Topic::Msg(AgentId(2)).to_string(), "msg/2");
        assert!("foo/1".parse::<Topic>().is_err());
        assert!("msg/x".parse::<Topic>().is_err());
    }

    #[test]
    fn lossless_publish_reaches_each_subscriber_once() {
        let mut t = ideal();
        for a in 1..4 {
            t.subscribe(AgentId(a), Topic::Msg(AgentId(0))).unwrap();
        }
        t.publish(AgentId(0), Topic::Msg(AgentId(0)), vec![1, 2], 0.5).unwrap();
        for a in 1..4 {
            let got = t.poll(AgentId(a), f64::INFINITY).unwrap();
            assert_eq!(got.len(), 1);
            assert_eq!(got[0].payload, vec![1, 2]);
        }
        assert!(t.poll(AgentId(0), f64::INFINITY).unwrap().is_empty());
    }

    #[test]
    fn nothing_before_delivery_time() {
        let preset = TransportPreset {
            name: "slow".into(),
            mode: TransportMode::Unicast {
                retry_limit: 0,
                positive_acks: false,
            },
            hops: 1,
            model: EmuNetModel {
                delay: DelayModel {
                    median_ms: 100.0,
                    sigma: 0.0,
                },
                ..EmuNetModel::ideal()
            },
            ack_timeout_ms: 10.0,
        };
        let mut t = EmuTransport::new(preset, 10.0);
        t.subscribe(AgentId(1), Topic::AgentMode).unwrap();
        t.publish(AgentId(0), Topic::AgentMode, vec![], 1.0).unwrap();
        assert!(t.poll(AgentId(1), 1.05).unwrap().is_empty());
        assert_eq!(t.poll(AgentId(1), 1.1).unwrap().len(), 1);
    }

    #[test]
    fn equal_delivery_times_order_by_sender_then_sequence() {
        let mut t = ideal();
        t.subscribe(AgentId(9), Topic::AgentMode).unwrap();
        for sender in [5u32, 2, 7, 2] {
            t.publish(AgentId(sender), Topic::AgentMode, vec![sender as u8], 1.0).unwrap();
        }
        let got = t.poll(AgentId(9), 1.0).unwrap();
        let order: Vec<_> = got.iter().map(|d| (d.sender.0, d.sequence)).collect();
        assert_eq!(order, vec![(2, 0), (2, 1), (5, 0), (7, 0)]);
    }

    #[test]
    fn closed_backend_errors() {
        let mut t = ideal();
        t.close();
        assert!(matches!(t.publish(AgentId(0), Topic::StateMachine, vec![], 0.0), Err(Error::Transport(_))));
        assert!(t.poll(AgentId(0), 0.0).is_err());
    }

    #[test]
    fn sequences_increase_per_sender_and_topic() {
        let mut t = ideal();
        assert_eq!(t.publish(AgentId(0), Topic::StateMachine, vec![], 0.0).unwrap(), 0);
        assert_eq!(t.publish(AgentId(0), Topic::StateMachine, vec![], 0.1).unwrap(), 1);
        assert_eq!(t.publish(AgentId(0), Topic::AgentMode, vec![], 0.1).unwrap(), 0);
        assert_eq!(t.publish(AgentId(1), Topic::StateMachine, vec![], 0.1).unwrap(), 0);
    }
}
