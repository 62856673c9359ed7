//! Seeded emulation of a shared wireless medium.
//!
//! Each physical transmission is lost with a probability that grows with the
//! offered load (linear interpolation over a contention table); a
//! transmission that survives arrives after a lognormal delay whose median
//! also scales with load. Retries are spaced by a fixed gap. Every random
//! draw is keyed by `(seed, sender, topic, sequence, hop, receiver, attempt)`
//! so outcomes do not depend on call order.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::mode::TransportMode;
use crate::rng::keyed_rng;
use crate::{AgentId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Median one-way delay in ms. Zero means an ideal, delay-free link.
    pub median_ms: f64,
    /// Standard deviation of the log-delay.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionPoint {
    /// Aggregate offered load, messages per second.
    pub load: f64,
    pub loss_mult: f64,
    pub delay_mult: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmuNetModel {
    pub delay: DelayModel,
    /// Per-attempt loss probability before contention scaling.
    pub loss: f64,
    #[serde(default)]
    pub contention: Vec<ContentionPoint>,
    /// Spacing between a lost attempt and its retry, ms.
    #[serde(default = "default_retry_gap")]
    pub retry_gap_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_retry_gap() -> f64 {
    2.0
}

impl EmuNetModel {
    pub fn ideal() -> Self {
        Self {
            delay: DelayModel {
                median_ms: 0.0,
                sigma: 0.0,
            },
            loss: 0.0,
            contention: Vec::new(),
            retry_gap_ms: default_retry_gap(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::validation(format!("loss probability {} outside [0, 1]", self.loss)));
        }
        if !(self.delay.median_ms >= 0.0 && self.delay.sigma >= 0.0) {
            return Err(Error::validation("delay median and sigma must be non-negative"));
        }
        if !(self.retry_gap_ms >= 0.0) {
            return Err(Error::validation("retry gap must be non-negative"));
        }
        for p in &self.contention {
            if !(p.load >= 0.0 && p.loss_mult >= 0.0 && p.delay_mult >= 0.0) {
                return Err(Error::validation("contention entries must be non-negative"));
            }
        }
        for w in self.contention.windows(2) {
            if w[1].load <= w[0].load {
                return Err(Error::validation("contention loads must be strictly increasing"));
            }
            if w[1].loss_mult < w[0].loss_mult || w[1].delay_mult < w[0].delay_mult {
                return Err(Error::validation("contention multipliers must be non-decreasing in load"));
            }
        }
        Ok(())
    }

    /// `(loss multiplier, delay multiplier)` at `load`, clamped to the table ends.
    pub fn contention_at(&self, load: f64) -> (f64, f64) {
        let t = &self.contention;
        match t.len() {
            0 => (1.0, 1.0),
            _ if load <= t[0].load => (t[0].loss_mult, t[0].delay_mult),
            _ if load >= t[t.len() - 1].load => {
                let last = t[t.len() - 1];
                (last.loss_mult, last.delay_mult)
            }
            _ => {
                let k = t.windows(2).position(|w| load <= w[1].load).unwrap();
                let (a, b) = (t[k], t[k + 1]);
                let f = (load - a.load) / (b.load - a.load);
                (
                    a.loss_mult + f * (b.loss_mult - a.loss_mult),
                    a.delay_mult + f * (b.delay_mult - a.delay_mult),
                )
            }
        }
    }

    /// Per-attempt loss probability at `load`.
    pub fn loss_at(&self, load: f64) -> f64 {
        (self.loss * self.contention_at(load).0).clamp(0.0, 1.0)
    }

    /// Median delay (ms) at `load`.
    pub fn median_delay_at(&self, load: f64) -> f64 {
        self.delay.median_ms * self.contention_at(load).1
    }

    /// One delay sample in seconds at offered load `load`.
    pub fn sample_delay_s(&self, load: f64, rng: &mut impl Rng) -> f64 {
        let median = self.median_delay_at(load);
        if median <= 0.0 {
            return 0.0;
        }
        if self.delay.sigma == 0.0 {
            return median / 1e3;
        }
        let dist = LogNormal::new(median.ln(), self.delay.sigma).expect("validated delay model");
        dist.sample(rng) / 1e3
    }
}

/// Outcome of one message towards one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub receiver: AgentId,
    pub sender: AgentId,
    pub sequence: u64,
    pub sent_at: f64,
    /// `None` when every attempt was lost.
    pub delivered_at: Option<f64>,
    pub attempts: u8,
}

impl DeliveryRecord {
    pub fn delay(&self) -> Option<f64> {
        self.delivered_at.map(|t| t - self.sent_at)
    }
}

/// Packet counters; `transmissions` are first attempts only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalCounts {
    pub messages: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub acks: u64,
}

impl PhysicalCounts {
    pub fn merge(&mut self, other: &PhysicalCounts) {
        self.messages += other.messages;
        self.transmissions += other.transmissions;
        self.retransmissions += other.retransmissions;
        self.acks += other.acks;
    }
}

/// Identity of the message being sent, used as the randomness key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendKey {
    pub sender: AgentId,
    pub topic: u16,
    pub sequence: u64,
    pub sent_at: f64,
}

/// Pseudo receiver id for the access point in two-hop delivery.
pub const ACCESS_POINT: AgentId = AgentId(u32::MAX);

struct HopResult {
    delivered_at: Option<f64>,
    attempts: u8,
}

fn attempt_rng(model: &EmuNetModel, key: &SendKey, hop: u64, receiver: AgentId, attempt: u8) -> impl Rng {
    keyed_rng(&[
        model.seed,
        key.sender.0 as u64,
        key.topic as u64,
        key.sequence,
        hop,
        receiver.0 as u64,
        attempt as u64,
    ])
}

/// One wireless hop from a single transmitter to `receivers`, starting at
/// `start`. Updates `counts` with the physical transmissions.
fn hop(
    model: &EmuNetModel,
    mode: &TransportMode,
    key: &SendKey,
    hop_index: u64,
    receivers: &[AgentId],
    start: f64,
    load: f64,
    counts: &mut PhysicalCounts,
) -> Vec<HopResult> {
    let p_loss = model.loss_at(load);
    let gap = model.retry_gap_ms / 1e3;
    let retries = mode.effective_retries();
    let trial = |receiver: AgentId, attempt: u8| -> Option<f64> {
        let mut rng = attempt_rng(model, key, hop_index, receiver, attempt);
        let lost = rng.random::<f64>() < p_loss;
        let delay = model.sample_delay_s(load, &mut rng);
        (!lost).then(|| start + attempt as f64 * gap + delay)
    };
    match mode {
        TransportMode::Unicast { .. } => receivers
            .iter()
            .map(|&r| {
                counts.transmissions += 1;
                let mut out = HopResult {
                    delivered_at: None,
                    attempts: 0,
                };
                for attempt in 0..=retries {
                    if attempt > 0 {
                        counts.retransmissions += 1;
                    }
                    out.attempts = attempt + 1;
                    if let Some(t) = trial(r, attempt) {
                        out.delivered_at = Some(t);
                        if mode.positive_acks() {
                            counts.acks += 1;
                        }
                        break;
                    }
                }
                out
            })
            .collect(),
        TransportMode::Multicast { .. } => {
            let mut out: Vec<HopResult> = receivers
                .iter()
                .map(|_| HopResult {
                    delivered_at: None,
                    attempts: 0,
                })
                .collect();
            if receivers.is_empty() {
                return out;
            }
            counts.transmissions += 1;
            for attempt in 0..=retries {
                if attempt > 0 {
                    if out.iter().all(|o| o.delivered_at.is_some()) {
                        break;
                    }
                    counts.retransmissions += 1;
                }
                for (o, &r) in out.iter_mut().zip(receivers) {
                    if o.delivered_at.is_some() {
                        continue;
                    }
                    o.attempts = attempt + 1;
                    if let Some(t) = trial(r, attempt) {
                        o.delivered_at = Some(t);
                        if mode.positive_acks() {
                            counts.acks += 1;
                        }
                    }
                }
            }
            out
        }
    }
}

/// Emulated delivery of one message to `subscribers`.
///
/// With `hops == 2` the message first travels to an access point (one
/// transmission with retries) and is then forwarded to every subscriber;
/// both hops sample independently.
pub fn emu_send(
    model: &EmuNetModel,
    mode: &TransportMode,
    hops: u8,
    key: &SendKey,
    subscribers: &[AgentId],
    offered_load: f64,
    counts: &mut PhysicalCounts,
) -> Vec<DeliveryRecord> {
    counts.messages += 1;
    let record = |receiver: AgentId, r: &HopResult| DeliveryRecord {
        receiver,
        sender: key.sender,
        sequence: key.sequence,
        sent_at: key.sent_at,
        delivered_at: r.delivered_at,
        attempts: r.attempts,
    };
    if subscribers.is_empty() {
        return Vec::new();
    }
    let (start, first_hop) = if hops >= 2 {
        let uplink_mode = TransportMode::Unicast {
            retry_limit: mode.retry_limit(),
            positive_acks: mode.positive_acks(),
        };
        let up = hop(model, &uplink_mode, key, 0, &[ACCESS_POINT], key.sent_at, offered_load, counts)
            .pop()
            .expect("one uplink result");
        match up.delivered_at {
            Some(t) => (t, 1),
            None => {
                return subscribers.iter().map(|&s| record(s, &up)).collect();
            }
        }
    } else {
        (key.sent_at, 0)
    };
    let results = hop(model, mode, key, first_hop, subscribers, start, offered_load, counts);
    subscribers
        .iter()
        .zip(&results)
        .map(|(&s, r)| record(s, r))
        .collect()
}
