//! Execution modes and the transport each one is bound to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cache::DEFAULT_WINDOW;
use crate::transport::TransportPreset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeVariant {
    /// One synchronous evaluator for the whole team.
    Centralized,
    /// Per-agent evaluators on a host, exchanging messages over a near-ideal link.
    Offboard,
    /// Per-agent evaluators onboard, messaging through an access point.
    OnboardInfra,
    /// Per-agent evaluators onboard, single-hop ad-hoc multicast.
    OnboardAdhoc,
}

impl ModeVariant {
    pub const ALL: [ModeVariant; 4] = [
        ModeVariant::Centralized,
        ModeVariant::Offboard,
        ModeVariant::OnboardInfra,
        ModeVariant::OnboardAdhoc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModeVariant::Centralized => "centralized",
            ModeVariant::Offboard => "offboard",
            ModeVariant::OnboardInfra => "onboard-infra",
            ModeVariant::OnboardAdhoc => "onboard-adhoc",
        }
    }

    pub fn default_preset(&self) -> &'static str {
        match self {
            ModeVariant::Centralized | ModeVariant::Offboard => "ideal",
            ModeVariant::OnboardInfra => "infra-unicast-r1",
            ModeVariant::OnboardAdhoc => "adhoc-multicast-r1",
        }
    }

    pub fn is_synchronous(&self) -> bool {
        matches!(self, ModeVariant::Centralized)
    }
}

impl fmt::Display for ModeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModeVariant::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown mode '{s}' (expected centralized, offboard, onboard-infra or onboard-adhoc)"
                ))
            })
    }
}

/// Where policies run and over which network their messages travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub variant: ModeVariant,
    pub preset: TransportPreset,
    /// Agents evaluate exactly on tick boundaries. When false every agent
    /// gets a seeded phase offset within the tick.
    #[serde(default = "yes")]
    pub aligned: bool,
    #[serde(default = "default_window")]
    pub cache_window: f64,
}

fn yes() -> bool {
    true
}

fn default_window() -> f64 {
    DEFAULT_WINDOW
}

/// A preset counts as near-ideal when it neither loses nor delays messages.
fn near_ideal(p: &TransportPreset) -> bool {
    p.model.loss == 0.0 && p.model.delay.median_ms <= 1.0
}

impl ModeConfig {
    pub fn new(variant: ModeVariant, preset: TransportPreset) -> Result<Self> {
        let cfg = Self {
            variant,
            preset,
            aligned: true,
            cache_window: DEFAULT_WINDOW,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The variant with its usual transport.
    pub fn preset(variant: ModeVariant) -> Result<Self> {
        Self::new(variant, TransportPreset::builtin(variant.default_preset())?)
    }

    /// Parses `<mode>` or `<mode>:<preset name or file>`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once(':') {
            Some((m, p)) => Self::new(m.parse()?, TransportPreset::resolve(p)?),
            None => Self::preset(text.parse()?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preset.validate()?;
        if !(self.cache_window > 0.0) {
            return Err(Error::validation("cache window must be positive"));
        }
        let p = &self.preset;
        let ok = match self.variant {
            ModeVariant::Centralized => near_ideal(p) || (p.hops == 2 && !p.mode.is_multicast()),
            ModeVariant::Offboard => near_ideal(p),
            ModeVariant::OnboardInfra => p.hops == 2,
            ModeVariant::OnboardAdhoc => p.hops == 1,
        };
        if !ok {
            return Err(Error::validation(format!(
                "transport preset '{}' cannot serve mode {}",
                p.name, self.variant
            )));
        }
        Ok(())
    }

    /// Aggregate message rate the network sees with `n` agents ticking every
    /// `dt`. Through an access point the pose stream of every agent travels
    /// alongside its latent messages.
    pub fn offered_load(&self, n: usize, dt: f64) -> f64 {
        let per_agent = match self.variant {
            ModeVariant::OnboardInfra => 2.0,
            _ => 1.0,
        };
        per_agent * n as f64 / dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bindings_validate() {
        for v in ModeVariant::ALL {
            let m = ModeConfig::preset(v).unwrap();
            assert_eq!(m.preset.name, v.default_preset());
            assert_eq!(v.name().parse::<ModeVariant>().unwrap(), v);
        }
    }

    #[test]
    fn centralized_rejects_adhoc_link() {
        let adhoc = TransportPreset::builtin("adhoc-multicast-r1").unwrap();
        assert!(matches!(
            ModeConfig::new(ModeVariant::Centralized, adhoc.clone()),
            Err(Error::Validation(_))
        ));
        assert!(ModeConfig::new(ModeVariant::Offboard, adhoc.clone()).is_err());
        assert!(ModeConfig::new(ModeVariant::OnboardInfra, adhoc).is_err());
        let infra = TransportPreset::builtin("infra-unicast-r1").unwrap();
        assert!(ModeConfig::new(ModeVariant::Centralized, infra).is_ok());
    }

    #[test]
    fn parse_with_explicit_preset() {
        let m = ModeConfig::parse("onboard-adhoc:unicast-default-r7").unwrap();
        assert_eq!(m.variant, ModeVariant::OnboardAdhoc);
        assert_eq!(m.preset.name, "unicast-default-r7");
        assert!(ModeConfig::parse("sideways").is_err());
    }

    #[test]
    fn infra_load_counts_pose_traffic() {
        let m = ModeConfig::preset(ModeVariant::OnboardInfra).unwrap();
        assert!((m.offered_load(5, 0.1) - 100.0).abs() < 1e-9);
        let m = ModeConfig::preset(ModeVariant::OnboardAdhoc).unwrap();
        assert!((m.offered_load(5, 0.1) - 50.0).abs() < 1e-9);
    }
}
