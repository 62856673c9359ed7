//! Publish/subscribe messaging over an emulated or a real datagram network.

pub mod emu;
pub mod mode;
pub mod preset;
pub mod pubsub;
pub mod udp;
pub mod wire;

pub use emu::{emu_send, ContentionPoint, DelayModel, DeliveryRecord, EmuNetModel, PhysicalCounts, SendKey, ACCESS_POINT};
pub use mode::{effective_delivery_prob, TransportMode, MAX_RETRY_LIMIT};
pub use preset::TransportPreset;
pub use pubsub::{Datagram, EmuTransport, Topic, Transport};
pub use udp::{HostClock, UdpConfig, UdpEndpoint, UdpStats, UdpTransport};
