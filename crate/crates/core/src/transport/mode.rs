use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default 802.11 hardware retry ceiling.
pub const MAX_RETRY_LIMIT: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportMode {
    /// One transmission per subscriber; lost frames are retried up to
    /// `retry_limit` times.
    Unicast { retry_limit: u8, positive_acks: bool },
    /// One broadcast per message. The broadcast is only repeated when
    /// subscribers acknowledge (`positive_acks`), then up to `retry_limit`.
    Multicast { retry_limit: u8, positive_acks: bool },
}

impl TransportMode {
    pub fn validate(&self) -> Result<()> {
        if self.retry_limit() > MAX_RETRY_LIMIT {
            return Err(Error::validation(format!(
                "retry limit {} exceeds {MAX_RETRY_LIMIT}",
                self.retry_limit()
            )));
        }
        Ok(())
    }

    pub fn retry_limit(&self) -> u8 {
        match *self {
            TransportMode::Unicast { retry_limit, .. } | TransportMode::Multicast { retry_limit, .. } => {
                retry_limit
            }
        }
    }

    pub fn positive_acks(&self) -> bool {
        match *self {
            TransportMode::Unicast { positive_acks, .. }
            | TransportMode::Multicast { positive_acks, .. } => positive_acks,
        }
    }

    pub fn is_multicast(&self) -> bool {
        matches!(self, TransportMode::Multicast { .. })
    }

    /// Retries that actually happen on a lost transmission.
    pub fn effective_retries(&self) -> u8 {
        match *self {
            TransportMode::Unicast { retry_limit, .. } => retry_limit,
            TransportMode::Multicast {
                retry_limit,
                positive_acks,
            } => {
                if positive_acks {
                    retry_limit
                } else {
                    0
                }
            }
        }
    }
}

/// Physical transmissions needed to hand one message to `subscribers`.
pub fn fanout_count(mode: &TransportMode, subscribers: usize) -> usize {
    match mode {
        TransportMode::Unicast { .. } => subscribers,
        TransportMode::Multicast { .. } => subscribers.min(1),
    }
}

/// Probability that at least one of `retry_limit + 1` independent attempts,
/// each lost with probability `loss_p`, gets through.
pub fn effective_delivery_prob(loss_p: f64, retry_limit: u8) -> f64 {
    1.0 - loss_p.powi(retry_limit as i32 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNI: TransportMode = TransportMode::Unicast {
        retry_limit: 1,
        positive_acks: true,
    };
    const MULTI: TransportMode = TransportMode::Multicast {
        retry_limit: 1,
        positive_acks: true,
    };

    #[test]
    fn fanout() {
        assert_eq!(fanout_count(&UNI, 4), 4);
        assert_eq!(fanout_count(&MULTI, 4), 1);
        assert_eq!(fanout_count(&UNI, 0), 0);
        assert_eq!(fanout_count(&MULTI, 0), 0);
    }

    #[test]
    fn delivery_probability() {
        assert_eq!(effective_delivery_prob(0.5, 1), 0.75);
        assert_eq!(effective_delivery_prob(0.0, 7), 1.0);
        assert!((effective_delivery_prob(0.3, 7) - (1.0 - 0.3f64.powi(8))).abs() < 1e-15);
    }

    #[test]
    fn retry_limit_ceiling() {
        let bad = TransportMode::Unicast {
            retry_limit: 8,
            positive_acks: false,
        };
        assert!(bad.validate().is_err());
        assert!(UNI.validate().is_ok());
    }

    #[test]
    fn multicast_without_acks_never_retries() {
        let m = TransportMode::Multicast {
            retry_limit: 3,
            positive_acks: false,
        };
        assert_eq!(m.effective_retries(), 0);
        assert_eq!(MULTI.effective_retries(), 1);
    }

    #[test]
    fn json_shape() {
        let v = serde_json::to_value(UNI).unwrap();
        assert_eq!(v["kind"], "unicast");
        assert_eq!(v["retry_limit"], 1);
    }
}
