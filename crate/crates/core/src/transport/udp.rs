//! Real datagram backend over UDP.
//!
//! Every endpoint owns a unicast socket (ephemeral loopback/LAN port) and,
//! in multicast mode, a socket joined to the shared group. Reliability is
//! application level: data packets may request an acknowledgement, and a
//! retransmission thread resends on ack timeout up to the retry limit, after
//! which the message is logged as lost. Loss can be injected at the receiver
//! on agent message topics, keyed by
//! `(seed, sender, topic, sequence, receiver, attempt)`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::emu::DeliveryRecord;
use super::mode::TransportMode;
use super::pubsub::{Datagram, Topic, Transport};
use super::wire::{self, Header, FLAG_ACK_REQUESTED, FLAG_MULTICAST};
use crate::rng::keyed_rng;
use crate::{AgentId, Error, Result};

/// Monotonic clock shared by all endpoints of one process, so one-way delays
/// can be measured directly.
#[derive(Debug, Clone, Copy)]
pub struct HostClock {
    epoch: Instant,
}

impl HostClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    pub fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    pub fn now_s(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}

impl Default for HostClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdpConfig {
    pub mode: TransportMode,
    pub ack_timeout_ms: f64,
    /// Probability that a receiver discards an incoming packet on a `msg/*`
    /// topic. Control, sensor and command traffic is never dropped.
    pub injected_loss: f64,
    pub seed: u64,
    /// Group used in multicast mode.
    pub group: SocketAddrV4,
    /// Interface address the sockets bind to.
    pub interface: Ipv4Addr,
}

impl UdpConfig {
    pub fn new(mode: TransportMode) -> Self {
        Self {
            mode,
            ack_timeout_ms: 10.0,
            injected_loss: 0.0,
            seed: 0,
            group: SocketAddrV4::new(Ipv4Addr::new(239, 255, 77, 1), 47_100),
            interface: Ipv4Addr::LOCALHOST,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if !(0.0..=1.0).contains(&self.injected_loss) {
            return Err(Error::validation("injected loss must lie in [0, 1]"));
        }
        if !(self.ack_timeout_ms > 0.0) {
            return Err(Error::validation("ack timeout must be positive"));
        }
        Ok(())
    }

    fn wants_acks(&self) -> bool {
        match self.mode {
            TransportMode::Unicast {
                retry_limit,
                positive_acks,
            } => positive_acks || retry_limit > 0,
            TransportMode::Multicast { positive_acks, .. } => positive_acks,
        }
    }
}

/// Packet counters of the real backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdpStats {
    pub data_sent: u64,
    pub retransmissions: u64,
    pub received: u64,
    pub dropped_injected: u64,
    pub duplicates: u64,
    pub acks_sent: u64,
    pub acks_received: u64,
    pub lost: u64,
}

impl UdpStats {
    pub fn merge(&mut self, o: &UdpStats) {
        self.data_sent += o.data_sent;
        self.retransmissions += o.retransmissions;
        self.received += o.received;
        self.dropped_injected += o.dropped_injected;
        self.duplicates += o.duplicates;
        self.acks_sent += o.acks_sent;
        self.acks_received += o.acks_received;
        self.lost += o.lost;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PendingKey {
    topic: u16,
    sequence: u64,
    /// `None` for a multicast broadcast awaiting several receivers.
    receiver: Option<AgentId>,
}

#[derive(Debug)]
struct PendingSend {
    header: Header,
    payload: Vec<u8>,
    dest: SocketAddr,
    outstanding: BTreeSet<AgentId>,
    attempts: u8,
    deadline: Instant,
}

#[derive(Debug, Default)]
struct Shared {
    pending: Mutex<BTreeMap<PendingKey, PendingSend>>,
    log: Mutex<Vec<DeliveryRecord>>,
    stats: Mutex<UdpStats>,
    seen: Mutex<HashSet<(AgentId, u16, u64)>>,
    closed: AtomicBool,
}

struct Endpoint {
    id: AgentId,
    socket: Arc<UdpSocket>,
    shared: Arc<Shared>,
    inbox: Receiver<Datagram>,
    buffered: Vec<Datagram>,
    subscribed: Arc<Mutex<HashSet<u16>>>,
    sequences: HashMap<u16, u64>,
    threads: Vec<JoinHandle<()>>,
}

struct RxContext {
    id: AgentId,
    reply: Arc<UdpSocket>,
    shared: Arc<Shared>,
    subscribed: Arc<Mutex<HashSet<u16>>>,
    inbox: Sender<Datagram>,
    config: UdpConfig,
    clock: HostClock,
}

impl RxContext {
    fn handle(&self, buf: &[u8], src: SocketAddr) {
        let Ok((header, payload)) = wire::decode(buf) else {
            log::debug!("endpoint {}: dropping malformed datagram from {src}", self.id);
            return;
        };
        if header.is_ack() {
            self.on_ack(&header);
            return;
        }
        if header.sender == self.id || !self.subscribed.lock().unwrap().contains(&header.topic) {
            return;
        }
        let lossy = matches!(Topic::from_id(header.topic), Some(Topic::Msg(_)));
        if lossy && self.config.injected_loss > 0.0 {
            let mut rng = keyed_rng(&[
                self.config.seed,
                header.sender.0 as u64,
                header.topic as u64,
                header.sequence,
                self.id.0 as u64,
                header.attempt() as u64,
            ]);
            if rng.random::<f64>() < self.config.injected_loss {
                self.shared.stats.lock().unwrap().dropped_injected += 1;
                return;
            }
        }
        let delivered_at = self.clock.now_s();
        {
            let mut stats = self.shared.stats.lock().unwrap();
            stats.received += 1;
            if header.flags & FLAG_ACK_REQUESTED != 0 {
                let ack = wire::encode(&header.ack_for(self.id), &[]);
                if self.reply.send_to(&ack, src).is_ok() {
                    stats.acks_sent += 1;
                }
            }
        }
        let fresh = self
            .shared
            .seen
            .lock()
            .unwrap()
            .insert((header.sender, header.topic, header.sequence));
        if !fresh {
            self.shared.stats.lock().unwrap().duplicates += 1;
            return;
        }
        let sent_at = header.send_time_us as f64 / 1e6;
        self.shared.log.lock().unwrap().push(DeliveryRecord {
            receiver: self.id,
            sender: header.sender,
            sequence: header.sequence,
            sent_at,
            delivered_at: Some(delivered_at.max(sent_at)),
            attempts: header.attempt() + 1,
        });
        let _ = self.inbox.send(Datagram {
            topic: header.topic,
            sender: header.sender,
            sequence: header.sequence,
            sent_at,
            delivered_at: delivered_at.max(sent_at),
            payload: payload.to_vec(),
        });
    }

    fn on_ack(&self, header: &Header) {
        self.shared.stats.lock().unwrap().acks_received += 1;
        let mut pending = self.shared.pending.lock().unwrap();
        let unicast = PendingKey {
            topic: header.topic,
            sequence: header.sequence,
            receiver: Some(header.sender),
        };
        if pending.remove(&unicast).is_some() {
            return;
        }
        let multicast = PendingKey {
            receiver: None,
            ..unicast
        };
        if let Some(p) = pending.get_mut(&multicast) {
            p.outstanding.remove(&header.sender);
            if p.outstanding.is_empty() {
                pending.remove(&multicast);
            }
        }
    }
}

fn rx_loop(socket: Arc<UdpSocket>, ctx: RxContext) {
    let mut buf = vec![0u8; 65_536];
    while !ctx.shared.closed.load(Ordering::Relaxed) {
        match socket.recv_from(&mut buf) {
            Ok((n, src)) => ctx.handle(&buf[..n], src),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => {
                log::warn!("endpoint {}: receive failed: {e}", ctx.id);
                std::thread::sleep(Duration::from_millis(1));
            }
        }
    }
}

fn retransmit_loop(socket: Arc<UdpSocket>, shared: Arc<Shared>, config: UdpConfig, id: AgentId) {
    let timeout = Duration::from_secs_f64(config.ack_timeout_ms / 1e3);
    let retries = config.mode.effective_retries();
    while !shared.closed.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_micros(500));
        let now = Instant::now();
        let mut pending = shared.pending.lock().unwrap();
        let expired: Vec<PendingKey> = pending
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(k, _)| *k)
            .collect();
        for key in expired {
            let p = pending.get_mut(&key).unwrap();
            if p.attempts <= retries {
                let header = p.header.with_attempt(p.attempts);
                if let Err(e) = socket.send_to(&wire::encode(&header, &p.payload), p.dest) {
                    log::warn!("endpoint {id}: retransmission failed: {e}");
                }
                p.attempts += 1;
                p.deadline = Instant::now() + timeout;
                shared.stats.lock().unwrap().retransmissions += 1;
            } else {
                let p = pending.remove(&key).unwrap();
                let mut log = shared.log.lock().unwrap();
                let mut stats = shared.stats.lock().unwrap();
                for r in p.outstanding {
                    stats.lost += 1;
                    log.push(DeliveryRecord {
                        receiver: r,
                        sender: id,
                        sequence: p.header.sequence,
                        sent_at: p.header.send_time_us as f64 / 1e6,
                        delivered_at: None,
                        attempts: p.attempts,
                    });
                }
            }
        }
    }
}

fn multicast_socket(config: &UdpConfig) -> Result<UdpSocket> {
    use socket2::{Domain, Protocol, Socket, Type};
    let err = |e: std::io::Error| Error::Transport(format!("multicast socket: {e}"));
    let s = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP)).map_err(err)?;
    s.set_reuse_address(true).map_err(err)?;
    #[cfg(unix)]
    s.set_reuse_port(true).map_err(err)?;
    let bind = SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, config.group.port());
    s.bind(&bind.into()).map_err(err)?;
    s.join_multicast_v4(config.group.ip(), &config.interface).map_err(err)?;
    let socket: UdpSocket = s.into();
    socket
        .set_read_timeout(Some(Duration::from_millis(5)))
        .map_err(|e| Error::Transport(e.to_string()))?;
    Ok(socket)
}

/// Addresses and subscriptions, shared by every endpoint of one network.
#[derive(Debug, Default)]
struct Directory {
    addresses: BTreeMap<AgentId, SocketAddr>,
    subscriptions: BTreeMap<u16, BTreeSet<AgentId>>,
}

type SharedDirectory = Arc<RwLock<Directory>>;

/// Binds the sockets of `id` and starts its background threads.
fn open_endpoint(id: AgentId, config: UdpConfig, clock: HostClock) -> Result<(Endpoint, SocketAddr)> {
    let tr = |e: std::io::Error| Error::Transport(format!("endpoint {id}: {e}"));
    let socket = UdpSocket::bind(SocketAddrV4::new(config.interface, 0)).map_err(tr)?;
    socket.set_read_timeout(Some(Duration::from_millis(5))).map_err(tr)?;
    if config.mode.is_multicast() {
        socket.set_multicast_loop_v4(true).map_err(tr)?;
        let raw = socket2::SockRef::from(&socket);
        raw.set_multicast_if_v4(&config.interface).map_err(tr)?;
    }
    let addr = socket.local_addr().map_err(tr)?;
    let socket = Arc::new(socket);
    let shared = Arc::new(Shared::default());
    let subscribed = Arc::new(Mutex::new(HashSet::new()));
    let (tx, rx) = channel();
    let ctx = |tx: Sender<Datagram>| RxContext {
        id,
        reply: socket.clone(),
        shared: shared.clone(),
        subscribed: subscribed.clone(),
        inbox: tx,
        config,
        clock,
    };
    let mut threads = Vec::new();
    let uni = socket.clone();
    let c = ctx(tx.clone());
    threads.push(std::thread::spawn(move || rx_loop(uni, c)));
    if config.mode.is_multicast() {
        let group = Arc::new(multicast_socket(&config)?);
        let c = ctx(tx);
        threads.push(std::thread::spawn(move || rx_loop(group, c)));
    }
    if config.wants_acks() {
        let (s, sh) = (socket.clone(), shared.clone());
        threads.push(std::thread::spawn(move || retransmit_loop(s, sh, config, id)));
    }
    let ep = Endpoint {
        id,
        socket,
        shared,
        inbox: rx,
        buffered: Vec::new(),
        subscribed,
        sequences: HashMap::new(),
        threads,
    };
    Ok((ep, addr))
}

impl Endpoint {
    fn subscribe(&mut self, dir: &SharedDirectory, topic: Topic) {
        self.subscribed.lock().unwrap().insert(topic.id());
        dir.write().unwrap().subscriptions.entry(topic.id()).or_default().insert(self.id);
    }

    fn send(&mut self, dir: &SharedDirectory, config: &UdpConfig, clock: &HostClock, topic: Topic, payload: Vec<u8>) -> Result<u64> {
        let endpoint = self.id;
        let now_us = clock.now_us();
        let receivers: Vec<(AgentId, SocketAddr)> = {
            let dir = dir.read().unwrap();
            dir.subscriptions
                .get(&topic.id())
                .into_iter()
                .flatten()
                .filter(|&&r| r != endpoint)
                .filter_map(|r| dir.addresses.get(r).map(|a| (*r, *a)))
                .collect()
        };
        let seq = self.sequences.entry(topic.id()).or_insert(0);
        let sequence = *seq;
        *seq += 1;
        let mut flags = 0;
        if config.wants_acks() {
            flags |= FLAG_ACK_REQUESTED;
        }
        if config.mode.is_multicast() {
            flags |= FLAG_MULTICAST;
        }
        let header = Header {
            flags,
            topic: topic.id(),
            sender: endpoint,
            sequence,
            send_time_us: now_us,
        };
        let bytes = wire::encode(&header, &payload);
        let deadline = Instant::now() + Duration::from_secs_f64(config.ack_timeout_ms / 1e3);
        let tr = |e: std::io::Error| Error::Transport(format!("send from {endpoint}: {e}"));
        if receivers.is_empty() {
            return Ok(sequence);
        }
        if config.mode.is_multicast() {
            if config.wants_acks() {
                self.shared.pending.lock().unwrap().insert(
                    PendingKey {
                        topic: header.topic,
                        sequence,
                        receiver: None,
                    },
                    PendingSend {
                        header,
                        payload,
                        dest: SocketAddr::V4(config.group),
                        outstanding: receivers.iter().map(|r| r.0).collect(),
                        attempts: 1,
                        deadline,
                    },
                );
            }
            self.socket.send_to(&bytes, config.group).map_err(tr)?;
            self.shared.stats.lock().unwrap().data_sent += 1;
        } else {
            for (r, addr) in receivers {
                if config.wants_acks() {
                    self.shared.pending.lock().unwrap().insert(
                        PendingKey {
                            topic: header.topic,
                            sequence,
                            receiver: Some(r),
                        },
                        PendingSend {
                            header,
                            payload: payload.clone(),
                            dest: addr,
                            outstanding: BTreeSet::from([r]),
                            attempts: 1,
                            deadline,
                        },
                    );
                }
                self.socket.send_to(&bytes, addr).map_err(tr)?;
                self.shared.stats.lock().unwrap().data_sent += 1;
            }
        }
        Ok(sequence)
    }

    fn poll(&mut self) -> Vec<Datagram> {
        self.buffered.extend(self.inbox.try_iter());
        let mut out = std::mem::take(&mut self.buffered);
        out.sort_by(|a, b| {
            a.delivered_at
                .total_cmp(&b.delivered_at)
                .then(a.sender.cmp(&b.sender))
                .then(a.sequence.cmp(&b.sequence))
        });
        out
    }

    fn in_flight(&self) -> usize {
        self.shared.pending.lock().unwrap().len()
    }

    fn log(&self) -> Vec<DeliveryRecord> {
        self.shared.log.lock().unwrap().clone()
    }

    fn stats(&self) -> UdpStats {
        *self.shared.stats.lock().unwrap()
    }

    fn shutdown(&mut self) {
        self.shared.closed.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        log::debug!("endpoint {} closed", self.id);
    }
}

fn sort_log(log: &mut [DeliveryRecord]) {
    log.sort_by(|a, b| (a.sender, a.sequence, a.receiver).cmp(&(b.sender, b.sequence, b.receiver)));
}

fn wait_until_acked(in_flight: impl Fn() -> usize, limit: Duration) -> bool {
    let until = Instant::now() + limit;
    while Instant::now() < until {
        if in_flight() == 0 {
            return true;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    in_flight() == 0
}

/// A set of UDP endpoints living in this process, one per agent.
///
/// Endpoints can be [detached](UdpTransport::detach) and moved to their own
/// thread; they keep seeing the subscriptions of the whole network.
pub struct UdpTransport {
    config: UdpConfig,
    clock: HostClock,
    directory: SharedDirectory,
    endpoints: BTreeMap<AgentId, Endpoint>,
    closed: bool,
}

impl UdpTransport {
    pub fn new(config: UdpConfig, clock: HostClock) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            clock,
            directory: SharedDirectory::default(),
            endpoints: BTreeMap::new(),
            closed: false,
        })
    }

    pub fn clock(&self) -> HostClock {
        self.clock
    }

    /// Binds the sockets of `id` and starts its background threads.
    pub fn open_endpoint(&mut self, id: AgentId) -> Result<SocketAddr> {
        if let Some(addr) = self.directory.read().unwrap().addresses.get(&id) {
            return Ok(*addr);
        }
        let (ep, addr) = open_endpoint(id, self.config, self.clock)?;
        self.endpoints.insert(id, ep);
        self.directory.write().unwrap().addresses.insert(id, addr);
        Ok(addr)
    }

    /// Moves endpoint `id` (opened on demand) out of the set.
    pub fn detach(&mut self, id: AgentId) -> Result<UdpEndpoint> {
        self.open_endpoint(id)?;
        let endpoint = self
            .endpoints
            .remove(&id)
            .ok_or_else(|| Error::Transport(format!("endpoint {id} is already detached")))?;
        Ok(UdpEndpoint {
            config: self.config,
            clock: self.clock,
            directory: self.directory.clone(),
            endpoint,
            closed: false,
        })
    }

    fn endpoint(&mut self, id: AgentId) -> Result<&mut Endpoint> {
        if self.closed {
            return Err(Error::Transport("UDP transport is closed".into()));
        }
        self.endpoints
            .get_mut(&id)
            .ok_or_else(|| Error::Transport(format!("no endpoint opened for agent {id}")))
    }

    /// Messages still awaiting acknowledgement across attached endpoints.
    pub fn in_flight(&self) -> usize {
        self.endpoints.values().map(Endpoint::in_flight).sum()
    }

    /// Waits until nothing is awaiting acknowledgement, or `limit` elapses.
    pub fn drain(&self, limit: Duration) -> bool {
        wait_until_acked(|| self.in_flight(), limit)
    }

    /// Merged delivery log of attached endpoints, ordered by (sender,
    /// sequence, receiver).
    pub fn delivery_log(&self) -> Vec<DeliveryRecord> {
        let mut all: Vec<DeliveryRecord> = self.endpoints.values().flat_map(Endpoint::log).collect();
        sort_log(&mut all);
        all
    }

    pub fn stats(&self) -> UdpStats {
        let mut total = UdpStats::default();
        for e in self.endpoints.values() {
            total.merge(&e.stats());
        }
        total
    }
}

impl Transport for UdpTransport {
    fn subscribe(&mut self, endpoint: AgentId, topic: Topic) -> Result<()> {
        if !self.endpoints.contains_key(&endpoint) {
            self.open_endpoint(endpoint)?;
        }
        let dir = self.directory.clone();
        self.endpoint(endpoint)?.subscribe(&dir, topic);
        Ok(())
    }

    fn publish(&mut self, endpoint: AgentId, topic: Topic, payload: Vec<u8>, _now: f64) -> Result<u64> {
        let (config, clock, dir) = (self.config, self.clock, self.directory.clone());
        self.endpoint(endpoint)?.send(&dir, &config, &clock, topic, payload)
    }

    /// Returns everything received so far; `now` is not used because the
    /// receive timestamps come from the host clock.
    fn poll(&mut self, endpoint: AgentId, _now: f64) -> Result<Vec<Datagram>> {
        Ok(self.endpoint(endpoint)?.poll())
    }

    fn close(&mut self) {
        self.closed = true;
        for ep in self.endpoints.values_mut() {
            ep.shutdown();
        }
    }
}

impl Drop for UdpTransport {
    fn drop(&mut self) {
        self.close();
    }
}

/// One endpoint owned by a single activity. It acts only as its own agent id.
pub struct UdpEndpoint {
    config: UdpConfig,
    clock: HostClock,
    directory: SharedDirectory,
    endpoint: Endpoint,
    closed: bool,
}

impl UdpEndpoint {
    pub fn id(&self) -> AgentId {
        self.endpoint.id
    }

    pub fn clock(&self) -> HostClock {
        self.clock
    }

    pub fn in_flight(&self) -> usize {
        self.endpoint.in_flight()
    }

    pub fn drain(&self, limit: Duration) -> bool {
        wait_until_acked(|| self.in_flight(), limit)
    }

    /// Records of messages this endpoint received or gave up on.
    pub fn delivery_log(&self) -> Vec<DeliveryRecord> {
        let mut log = self.endpoint.log();
        sort_log(&mut log);
        log
    }

    pub fn stats(&self) -> UdpStats {
        self.endpoint.stats()
    }

    fn check(&self, endpoint: AgentId) -> Result<()> {
        if self.closed {
            return Err(Error::Transport(format!("endpoint {} is closed", self.id())));
        }
        if endpoint != self.id() {
            return Err(Error::Transport(format!(
                "endpoint {} cannot act as agent {endpoint}",
                self.id()
            )));
        }
        Ok(())
    }
}

impl Transport for UdpEndpoint {
    fn subscribe(&mut self, endpoint: AgentId, topic: Topic) -> Result<()> {
        self.check(endpoint)?;
        self.endpoint.subscribe(&self.directory, topic);
        Ok(())
    }

    fn publish(&mut self, endpoint: AgentId, topic: Topic, payload: Vec<u8>, _now: f64) -> Result<u64> {
        self.check(endpoint)?;
        self.endpoint.send(&self.directory, &self.config, &self.clock, topic, payload)
    }

    fn poll(&mut self, endpoint: AgentId, _now: f64) -> Result<Vec<Datagram>> {
        self.check(endpoint)?;
        Ok(self.endpoint.poll())
    }

    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            self.endpoint.shutdown();
        }
    }
}

impl Drop for UdpEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unicast(retry_limit: u8) -> UdpConfig {
        UdpConfig::new(TransportMode::Unicast {
            retry_limit,
            positive_acks: true,
        })
    }

    fn wait_for(t: &mut UdpTransport, id: AgentId, count: usize) -> Vec<Datagram> {
        let mut got = Vec::new();
        let until = Instant::now() + Duration::from_secs(2);
        while got.len() < count && Instant::now() < until {
            got.extend(t.poll(id, 0.0).unwrap());
            std::thread::sleep(Duration::from_millis(1));
        }
        got
    }

    #[test]
    fn loopback_unicast_delivers_once() {
        let mut t = UdpTransport::new(unicast(1), HostClock::new()).unwrap();
        t.subscribe(AgentId(1), Topic::Msg(AgentId(0))).unwrap();
        t.open_endpoint(AgentId(0)).unwrap();
        for k in 0..50u8 {
            t.publish(AgentId(0), Topic::Msg(AgentId(0)), vec![k], 0.0).unwrap();
        }
        let got = wait_for(&mut t, AgentId(1), 50);
        assert!(t.drain(Duration::from_secs(1)));
        assert_eq!(got.len(), 50);
        let mut payloads: Vec<u8> = got.iter().map(|d| d.payload[0]).collect();
        payloads.sort();
        assert_eq!(payloads, (0..50).collect::<Vec<_>>());
        let log = t.delivery_log();
        assert_eq!(log.len(), 50);
        assert!(log.iter().all(|r| r.attempts == 1 && r.delay().unwrap() >= 0.0));
        let s = t.stats();
        assert_eq!(s.acks_sent, s.received);
        assert_eq!(s.retransmissions, 0);
    }

    #[test]
    fn injected_loss_is_recovered_by_retries() {
        let mut cfg = unicast(3);
        cfg.injected_loss = 0.3;
        cfg.seed = 11;
        let mut t = UdpTransport::new(cfg, HostClock::new()).unwrap();
        t.subscribe(AgentId(1), Topic::Msg(AgentId(0))).unwrap();
        t.open_endpoint(AgentId(0)).unwrap();
        for _ in 0..200 {
            t.publish(AgentId(0), Topic::Msg(AgentId(0)), vec![0; 8], 0.0).unwrap();
        }
        assert!(t.drain(Duration::from_secs(3)));
        let log = t.delivery_log();
        assert_eq!(log.len(), 200);
        let delivered = log.iter().filter(|r| r.delivered_at.is_some()).count();
        assert!(delivered >= 190, "{delivered}");
        assert!(t.stats().retransmissions > 0);
    }

    #[test]
    fn unsubscribed_topics_are_ignored() {
        let mut t = UdpTransport::new(unicast(0), HostClock::new()).unwrap();
        t.subscribe(AgentId(1), Topic::Msg(AgentId(0))).unwrap();
        t.open_endpoint(AgentId(0)).unwrap();
        t.publish(AgentId(0), Topic::Cmd(AgentId(0)), vec![1], 0.0).unwrap();
        std::thread::sleep(Duration::from_millis(30));
        assert!(t.poll(AgentId(1), 0.0).unwrap().is_empty());
    }

    #[test]
    fn loopback_multicast_reaches_all_subscribers() {
        let mut cfg = UdpConfig::new(TransportMode::Multicast {
            retry_limit: 1,
            positive_acks: true,
        });
        cfg.group = SocketAddrV4::new(Ipv4Addr::new(239, 255, 77, 2), 47_123);
        let mut t = UdpTransport::new(cfg, HostClock::new()).unwrap();
        let topic = Topic::Msg(AgentId(0));
        for r in 1..4 {
            t.subscribe(AgentId(r), topic).unwrap();
        }
        if t.open_endpoint(AgentId(0)).is_err() {
            return;
        }
        for _ in 0..10 {
            t.publish(AgentId(0), topic, vec![9], 0.0).unwrap();
        }
        for r in 1..4 {
            assert_eq!(wait_for(&mut t, AgentId(r), 10).len(), 10);
        }
        assert!(t.drain(Duration::from_secs(1)));
        assert_eq!(t.stats().data_sent, 10);
    }

    #[test]
    fn detached_endpoints_talk_across_threads() {
        let mut t = UdpTransport::new(unicast(1), HostClock::new()).unwrap();
        t.subscribe(AgentId(1), Topic::Cmd(AgentId(0))).unwrap();
        let mut rx = t.detach(AgentId(1)).unwrap();
        let mut tx = t.detach(AgentId(0)).unwrap();
        assert!(t.detach(AgentId(0)).is_err());
        assert!(tx.publish(AgentId(1), Topic::Cmd(AgentId(0)), vec![], 0.0).is_err());
        let sender = std::thread::spawn(move || {
            for k in 0..20u8 {
                tx.publish(AgentId(0), Topic::Cmd(AgentId(0)), vec![k], 0.0).unwrap();
            }
            assert!(tx.drain(Duration::from_secs(1)));
            tx.stats()
        });
        let mut got = Vec::new();
        let until = Instant::now() + Duration::from_secs(2);
        while got.len() < 20 && Instant::now() < until {
            got.extend(rx.poll(AgentId(1), 0.0).unwrap());
            std::thread::sleep(Duration::from_millis(1));
        }
        let stats = sender.join().unwrap();
        assert_eq!(got.len(), 20);
        assert_eq!(stats.data_sent, 20);
        assert_eq!(rx.delivery_log().len(), 20);
    }

    #[test]
    fn injected_loss_spares_control_topics() {
        let mut cfg = unicast(0);
        cfg.injected_loss = 1.0;
        let mut t = UdpTransport::new(cfg, HostClock::new()).unwrap();
        t.subscribe(AgentId(1), Topic::Msg(AgentId(0))).unwrap();
        t.subscribe(AgentId(1), Topic::Sensor(AgentId(1))).unwrap();
        t.open_endpoint(AgentId(0)).unwrap();
        for _ in 0..5 {
            t.publish(AgentId(0), Topic::Msg(AgentId(0)), vec![1], 0.0).unwrap();
            t.publish(AgentId(0), Topic::Sensor(AgentId(1)), vec![2], 0.0).unwrap();
        }
        let got = wait_for(&mut t, AgentId(1), 5);
        std::thread::sleep(Duration::from_millis(20));
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|d| d.payload == vec![2]));
        assert_eq!(t.stats().dropped_injected, 5);
    }

    #[test]
    fn closed_transport_rejects_publish() {
        let mut t = UdpTransport::new(unicast(0), HostClock::new()).unwrap();
        t.open_endpoint(AgentId(0)).unwrap();
        t.close();
        assert!(t.publish(AgentId(0), Topic::StateMachine, vec![], 0.0).is_err());
    }
}
