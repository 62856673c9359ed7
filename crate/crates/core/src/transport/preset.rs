use std::path::Path;

use serde::{Deserialize, Serialize};

use super::emu::EmuNetModel;
use super::mode::TransportMode;
use crate::{Error, Result};

/// A named network configuration: delivery semantics plus emulation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPreset {
    pub name: String,
    pub mode: TransportMode,
    /// 1 for direct (ad-hoc) links, 2 for relaying through an access point.
    #[serde(default = "one")]
    pub hops: u8,
    pub model: EmuNetModel,
    /// Real backend only: time to wait for an acknowledgement, ms.
    #[serde(default = "default_ack_timeout")]
    pub ack_timeout_ms: f64,
}

fn one() -> u8 {
    1
}

fn default_ack_timeout() -> f64 {
    10.0
}

pub const BUILTIN_PRESETS: [&str; 4] = [
    "ideal",
    "adhoc-multicast-r1",
    "infra-unicast-r1",
    "unicast-default-r7",
];

fn builtin_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "ideal" => include_str!("../../presets/ideal.json"),
        "adhoc-multicast-r1" => include_str!("../../presets/adhoc-multicast-r1.json"),
        "infra-unicast-r1" => include_str!("../../presets/infra-unicast-r1.json"),
        "unicast-default-r7" => include_str!("../../presets/unicast-default-r7.json"),
        _ => return None,
    })
}

impl TransportPreset {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.model.validate()?;
        if !(1..=2).contains(&self.hops) {
            return Err(Error::validation(format!("hops must be 1 or 2, got {}", self.hops)));
        }
        if !(self.ack_timeout_ms > 0.0) {
            return Err(Error::validation("ack timeout must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        p.validate()?;
        Ok(p)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = builtin_text(name)
            .ok_or_else(|| Error::validation(format!("unknown transport preset '{name}'")))?;
        Self::from_json(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// A built-in preset name or a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if builtin_text(name_or_path).is_some() {
            Self::builtin(name_or_path)
        } else {
            Self::load(name_or_path)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_validate() {
        for name in BUILTIN_PRESETS {
            let p = TransportPreset::builtin(name).unwrap();
            assert_eq!(p.name, name);
        }
        assert!(TransportPreset::builtin("carrier-pigeon").is_err());
    }

    #[test]
    fn builtin_semantics() {
        let adhoc = TransportPreset::builtin("adhoc-multicast-r1").unwrap();
        assert!(adhoc.mode.is_multicast());
        assert_eq!(adhoc.mode.retry_limit(), 1);
        let infra = TransportPreset::builtin("infra-unicast-r1").unwrap();
        assert_eq!(infra.hops, 2);
        let r7 = TransportPreset::builtin("unicast-default-r7").unwrap();
        assert_eq!(r7.mode.retry_limit(), 7);
        let ideal = TransportPreset::builtin("ideal").unwrap();
        assert_eq!(ideal.model.loss_at(1e3), 0.0);
        assert_eq!(ideal.model.median_delay_at(1e3), 0.0);
    }

    #[test]
    fn contention_tables_are_monotone_over_their_hull() {
        for name in BUILTIN_PRESETS {
            let p = TransportPreset::builtin(name).unwrap();
            let mut last = (0.0, 0.0);
            for step in 0..=600 {
                let load = step as f64;
                let now = (p.model.loss_at(load), p.model.median_delay_at(load));
                assert!(now.0 >= last.0 && now.1 >= last.1, "{name} at {load}");
                last = now;
            }
        }
    }
}
