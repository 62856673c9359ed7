//! Latency benchmark: `nodes` publishers each sending `rate / nodes`
//! messages per second to every other node, recording one-way delays.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::transport::{DeliveryRecord, EmuTransport, HostClock, Topic, Transport, TransportPreset, UdpConfig, UdpTransport};
use crate::{AgentId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Emulated network, virtual time.
    Emu,
    /// Real UDP sockets on this host, wall-clock time.
    Udp,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Emu => "emu",
            Backend::Udp => "udp",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emu" => Ok(Backend::Emu),
            "udp" => Ok(Backend::Udp),
            _ => Err(Error::validation(format!("unknown backend '{s}' (expected emu or udp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetbenchConfig {
    pub nodes: usize,
    /// Aggregate message rates, msg/s.
    pub rates: Vec<f64>,
    pub presets: Vec<TransportPreset>,
    /// Seconds per (preset, rate) cell; ignored when `messages` is set.
    pub duration: f64,
    /// Exact number of messages per cell.
    pub messages: Option<u64>,
    pub backend: Backend,
    pub seed: u64,
    /// UDP only: drop packets at the receiver with the preset's loss.
    pub inject_loss: bool,
    pub payload_bytes: usize,
}

impl NetbenchConfig {
    pub fn new(presets: Vec<TransportPreset>, rates: Vec<f64>) -> Self {
        Self {
            nodes: 5,
            rates,
            presets,
            duration: 10.0,
            messages: None,
            backend: Backend::Emu,
            seed: 0,
            inject_loss: true,
            payload_bytes: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::validation("netbench needs at least two nodes"));
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::validation("rates must be positive"));
        }
        if self.presets.is_empty() {
            return Err(Error::validation("netbench needs at least one transport preset"));
        }
        if self.messages.is_none() && !(self.duration > 0.0) {
            return Err(Error::validation("duration must be positive"));
        }
        for p in &self.presets {
            p.validate()?;
        }
        Ok(())
    }

    fn message_count(&self, rate: f64) -> u64 {
        self.messages.unwrap_or_else(|| (rate * self.duration).round().max(1.0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetbenchResult {
    pub preset: String,
    pub rate: f64,
    pub backend: Backend,
    pub nodes: usize,
    pub messages: u64,
    /// `messages * (nodes - 1)`.
    pub expected: u64,
    pub delivered: u64,
    pub delivered_fraction: f64,
    pub within_20ms: f64,
    pub within_50ms: f64,
    pub median_delay_ms: Option<f64>,
    /// Physical packets put on the air (first attempts and retries).
    pub transmissions: u64,
    pub retransmissions: u64,
    /// Achieved send rate, msg/s.
    pub achieved_rate: f64,
    /// The backend could not sustain the requested rate; records are still
    /// complete.
    pub saturated: bool,
    #[serde(skip)]
    pub delays_ms: Vec<f64>,
}

impl NetbenchResult {
    fn build(
        preset: &TransportPreset,
        rate: f64,
        backend: Backend,
        nodes: usize,
        messages: u64,
        log: &[DeliveryRecord],
    ) -> Self {
        let expected = messages * (nodes as u64 - 1);
        let mut delays_ms: Vec<f64> = log.iter().filter_map(|r| r.delay()).map(|d| d * 1e3).collect();
        delays_ms.sort_by(f64::total_cmp);
        let frac = |n: usize| if expected == 0 { 0.0 } else { n as f64 / expected as f64 };
        let within = |ms: f64| frac(delays_ms.partition_point(|d| *d <= ms));
        Self {
            preset: preset.name.clone(),
            rate,
            backend,
            nodes,
            messages,
            expected,
            delivered: delays_ms.len() as u64,
            delivered_fraction: frac(delays_ms.len()),
            within_20ms: within(20.0),
            within_50ms: within(50.0),
            median_delay_ms: crate::metrics::median(&delays_ms),
            transmissions: 0,
            retransmissions: 0,
            achieved_rate: rate,
            saturated: false,
            delays_ms,
        }
    }

    /// Fraction of expected deliveries that arrived within `ms`.
    pub fn fraction_within(&self, ms: f64) -> f64 {
        if self.expected == 0 {
            return 0.0;
        }
        self.delays_ms.partition_point(|d| *d <= ms) as f64 / self.expected as f64
    }

    /// CDF sampled every `step_ms` up to `max_ms`, plus the largest delay.
    pub fn cdf(&self, step_ms: f64, max_ms: f64) -> Vec<(f64, f64)> {
        let steps = (max_ms / step_ms).round() as usize;
        let mut pts: Vec<(f64, f64)> = (0..=steps)
            .map(|k| {
                let d = k as f64 * step_ms;
                (d, self.fraction_within(d))
            })
            .collect();
        if let Some(&last) = self.delays_ms.last() {
            if last > max_ms {
                pts.push((last, self.fraction_within(last)));
            }
        }
        pts
    }

    pub fn file_stem(&self) -> String {
        format!("cdf_{}_{}", self.preset, fmt_rate(self.rate))
    }
}

fn fmt_rate(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as u64)
    } else {
        format!("{r}")
    }
}

fn node_ids(n: usize) -> Vec<AgentId> {
    (0..n as u32).map(AgentId).collect()
}

fn subscribe_all(t: &mut dyn Transport, ids: &[AgentId]) -> Result<()> {
    for &i in ids {
        for &j in ids {
            if i != j {
                t.subscribe(j, Topic::Msg(i))?;
            }
        }
    }
    Ok(())
}

fn run_emu(cfg: &NetbenchConfig, preset: &TransportPreset, rate: f64) -> Result<NetbenchResult> {
    let ids = node_ids(cfg.nodes);
    let seed = crate::rng::key_seed(&[cfg.seed, rate.to_bits()]);
    let mut t = EmuTransport::new(preset.clone().with_seed(seed), rate);
    subscribe_all(&mut t, &ids)?;
    let messages = cfg.message_count(rate);
    let payload = vec![0u8; cfg.payload_bytes];
    let mut log = Vec::with_capacity((messages as usize) * (cfg.nodes - 1));
    for q in 0..messages {
        let sender = ids[(q % cfg.nodes as u64) as usize];
        let now = q as f64 / rate;
        t.publish(sender, Topic::Msg(sender), payload.clone(), now)?;
        if q % 1024 == 1023 || q + 1 == messages {
            for &r in &ids {
                t.poll(r, f64::INFINITY)?;
            }
            log.append(&mut t.take_delivery_log());
        }
    }
    let counts = t.counts();
    let mut res = NetbenchResult::build(preset, rate, Backend::Emu, cfg.nodes, messages, &log);
    res.transmissions = counts.transmissions + counts.retransmissions;
    res.retransmissions = counts.retransmissions;
    Ok(res)
}

fn run_udp(cfg: &NetbenchConfig, preset: &TransportPreset, rate: f64, group_port: u16) -> Result<NetbenchResult> {
    let ids = node_ids(cfg.nodes);
    let mut ucfg = UdpConfig::new(preset.mode);
    ucfg.ack_timeout_ms = preset.ack_timeout_ms;
    ucfg.seed = crate::rng::key_seed(&[cfg.seed, rate.to_bits()]);
    if cfg.inject_loss {
        ucfg.injected_loss = preset.model.loss_at(rate);
    }
    ucfg.group.set_port(group_port);
    let mut t = UdpTransport::new(ucfg, HostClock::new())?;
    subscribe_all(&mut t, &ids)?;
    let messages = cfg.message_count(rate);
    let payload = vec![0u8; cfg.payload_bytes];
    let start = Instant::now();
    let mut behind = 0u64;
    for q in 0..messages {
        let due = start + Duration::from_secs_f64(q as f64 / rate);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        } else if now - due > Duration::from_millis(5) {
            behind += 1;
        }
        let sender = ids[(q % cfg.nodes as u64) as usize];
        t.publish(sender, Topic::Msg(sender), payload.clone(), 0.0)?;
        if q % 256 == 255 {
            for &r in &ids {
                t.poll(r, 0.0)?;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64().max(1e-9);
    let drained = t.drain(Duration::from_secs(2));
    std::thread::sleep(Duration::from_millis(50));
    t.close();
    let log = t.delivery_log();
    let stats = t.stats();
    let mut res = NetbenchResult::build(preset, rate, Backend::Udp, cfg.nodes, messages, &log);
    res.transmissions = stats.data_sent + stats.retransmissions;
    res.retransmissions = stats.retransmissions;
    res.achieved_rate = messages as f64 / elapsed;
    res.saturated = !drained || behind > messages / 20 || res.achieved_rate < 0.95 * rate;
    if res.saturated {
        log::warn!(
            "{} @ {rate} msg/s saturated the UDP backend (achieved {:.1} msg/s)",
            preset.name,
            res.achieved_rate
        );
    }
    Ok(res)
}

/// Runs every (preset, rate) cell in order.
pub fn netbench(cfg: &NetbenchConfig) -> Result<Vec<NetbenchResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (pi, preset) in cfg.presets.iter().enumerate() {
        for (ri, &rate) in cfg.rates.iter().enumerate() {
            let res = match cfg.backend {
                Backend::Emu => run_emu(cfg, preset, rate)?,
                Backend::Udp => run_udp(cfg, preset, rate, 47_200 + (pi * 64 + ri) as u16 % 2000)?,
            };
            log::info!(
                "{} @ {rate} msg/s: delivered {:.3}, within 20 ms {:.3}",
                res.preset,
                res.delivered_fraction,
                res.within_20ms
            );
            out.push(res);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_cdf_is_a_step_at_zero() {
        let mut cfg = NetbenchConfig::new(vec![TransportPreset::builtin("ideal").unwrap()], vec![10.0, 500.0]);
        cfg.messages = Some(200);
        for r in netbench(&cfg).unwrap() {
            assert_eq!(r.delivered, r.expected);
            let cdf = r.cdf(0.5, 10.0);
            assert_eq!(cdf[0], (0.0, 1.0));
            assert!(cdf.iter().all(|p| p.1 == 1.0));
        }
    }

    #[test]
    fn cdf_is_monotone_and_bounded_by_delivery() {
        let mut cfg = NetbenchConfig::new(vec![TransportPreset::builtin("infra-unicast-r1").unwrap()], vec![100.0]);
        cfg.messages = Some(2000);
        let r = &netbench(&cfg).unwrap()[0];
        let cdf = r.cdf(0.5, 200.0);
        assert!(cdf.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!(cdf.iter().all(|p| p.1 <= r.delivered_fraction + 1e-12));
        assert_eq!(r.file_stem(), "cdf_infra-unicast-r1_100");
    }

    #[test]
    fn udp_backend_delivers_on_loopback() {
        let mut cfg = NetbenchConfig::new(vec![TransportPreset::builtin("infra-unicast-r1").unwrap()], vec![200.0]);
        cfg.backend = Backend::Udp;
        cfg.inject_loss = false;
        cfg.messages = Some(100);
        cfg.nodes = 3;
        let r = &netbench(&cfg).unwrap()[0];
        assert_eq!(r.expected, 200);
        assert_eq!(r.delivered, 200);
        assert!(r.median_delay_ms.unwrap() >= 0.0);
    }
}
