//! Datagram framing for the real backend.
//!
//! ```text
//! offset size field
//!      0    4 magic        "SMSH" as little-endian u32
//!      4    1 version
//!      5    1 flags        bit0 ack, bit1 multicast, bit2 ack requested,
//!                          bits 4..8 attempt index
//!      6    2 topic id
//!      8    4 sender
//!     12    8 sequence
//!     20    8 send time, microseconds on the shared host clock
//!     28      payload
//! ```
//! All fields little-endian. An acknowledgement is a bare header with the
//! ack flag set, echoing topic, sequence and send time of the data packet.

use crate::{AgentId, Error, Result};

pub const MAGIC: u32 = u32::from_le_bytes(*b"SMSH");
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;

pub const FLAG_ACK: u8 = 0x01;
pub const FLAG_MULTICAST: u8 = 0x02;
pub const FLAG_ACK_REQUESTED: u8 = 0x04;
const ATTEMPT_SHIFT: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub flags: u8,
    pub topic: u16,
    pub sender: AgentId,
    pub sequence: u64,
    pub send_time_us: u64,
}

impl Header {
    pub fn is_ack(&self) -> bool {
        self.flags & FLAG_ACK != 0
    }

    pub fn attempt(&self) -> u8 {
        self.flags >> ATTEMPT_SHIFT
    }

    pub fn with_attempt(mut self, attempt: u8) -> Self {
        self.flags = (self.flags & 0x0F) | (attempt.min(15) << ATTEMPT_SHIFT);
        self
    }

    pub fn ack_for(&self, acker: AgentId) -> Header {
        Header {
            flags: FLAG_ACK | (self.flags & 0xF0),
            sender: acker,
            ..*self
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(WIRE_VERSION);
        out.push(self.flags);
        out.extend_from_slice(&self.topic.to_le_bytes());
        out.extend_from_slice(&self.sender.0.to_le_bytes());
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&self.send_time_us.to_le_bytes());
    }
}

pub fn encode(header: &Header, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    header.write(&mut out);
    out.extend_from_slice(payload);
    out
}

/// Splits a datagram into header and payload.
pub fn decode(buf: &[u8]) -> Result<(Header, &[u8])> {
    if buf.len() < HEADER_LEN {
        return Err(Error::Parse {
            offset: buf.len(),
            message: format!("datagram of {} bytes is shorter than the header", buf.len()),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(0) != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    if buf[4] != WIRE_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported wire version {}", buf[4]),
        });
    }
    let header = Header {
        flags: buf[5],
        topic: u16::from_le_bytes([buf[6], buf[7]]),
        sender: AgentId(u32_at(8)),
        sequence: u64_at(12),
        send_time_us: u64_at(20),
    };
    Ok((header, &buf[HEADER_LEN..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let h = Header {
            flags: FLAG_ACK_REQUESTED,
            topic: 0x1002,
            sender: AgentId(7),
            sequence: 0x0102_0304_0506_0708,
            send_time_us: 42,
        }
        .with_attempt(3);
        let bytes = encode(&h, &[0xAA]);
        assert_eq!(bytes.len(), HEADER_LEN + 1);
        assert_eq!(&bytes[0..4], b"SMSH");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0x34);
        assert_eq!(&bytes[6..8], &[0x02, 0x10]);
        assert_eq!(&bytes[8..12], &[7, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[20..28], &[42, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[28], 0xAA);
    }

    #[test]
    fn ack_has_no_payload_and_echoes_identity() {
        let h = Header {
            flags: FLAG_ACK_REQUESTED,
            topic: 9,
            sender: AgentId(1),
            sequence: 5,
            send_time_us: 100,
        }
        .with_attempt(1);
        let ack = h.ack_for(AgentId(2));
        let bytes = encode(&ack, &[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        let (back, payload) = decode(&bytes).unwrap();
        assert!(back.is_ack());
        assert!(payload.is_empty());
        assert_eq!((back.topic, back.sequence, back.sender, back.attempt()), (9, 5, AgentId(2), 1));
    }

    #[test]
    fn rejects_short_and_foreign_datagrams() {
        assert!(decode(&[0u8; 10]).is_err());
        let mut bytes = encode(
            &Header {
                flags: 0,
                topic: 0,
                sender: AgentId(0),
                sequence: 0,
                send_time_us: 0,
            },
            &[],
        );
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Parse { offset: 4, .. })));
        bytes[0] = 0;
        assert!(matches!(decode(&bytes), Err(Error::Parse { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(flags: u8, topic: u16, sender: u32, sequence: u64, t: u64,
                                 payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let h = Header { flags, topic, sender: AgentId(sender), sequence, send_time_us: t };
            let bytes = encode(&h, &payload);
            let (back, body) = decode(&bytes).unwrap();
            prop_assert_eq!(back, h);
            prop_assert_eq!(body, payload.as_slice());
        }
    }
}
