use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::{Error, Result};

/// A vertical wall at `x` spanning the arena, with one passage gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x: f64,
    pub thickness: f64,
    pub passage_center: f64,
    pub passage_width: f64,
}

impl Default for Wall {
    fn default() -> Self {
        Self {
            x: 0.0,
            thickness: 0.2,
            passage_center: 0.0,
            passage_width: 1.0,
        }
    }
}

impl Wall {
    /// The two solid segments as `(min, max)` rectangles clipped to `bounds`.
    pub fn segments(&self, bounds: &Bounds) -> [(Vec2, Vec2); 2] {
        let x0 = self.x - self.thickness / 2.0;
        let x1 = self.x + self.thickness / 2.0;
        let gap_lo = self.passage_center - self.passage_width / 2.0;
        let gap_hi = self.passage_center + self.passage_width / 2.0;
        [
            ([x0, bounds.min[1]], [x1, gap_lo]),
            ([x0, gap_hi], [x1, bounds.max[1]]),
        ]
    }

    /// Centre of the passage opening.
    pub fn passage_point(&self) -> Vec2 {
        [self.x, self.passage_center]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: [-5.0, -5.0],
            max: [5.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Distance to goal (m) counted as arrived.
    pub goal: f64,
    /// Centre distance (m) below which two agents collide.
    pub agent_collision: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            goal: 0.25,
            agent_collision: 0.32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// m/s^2
    pub a_max: f64,
    /// m/s
    pub v_max: f64,
    /// Control tick, s.
    pub dt: f64,
    pub wall: Option<Wall>,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default = "default_radius")]
    pub agent_radius: f64,
    /// Episode timeout, s.
    pub timeout: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_radius() -> f64 {
    0.16
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            v_max: 1.0,
            dt: 0.1,
            wall: Some(Wall::default()),
            bounds: Bounds::default(),
            agent_radius: default_radius(),
            timeout: 30.0,
            thresholds: Thresholds::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("dt", self.dt),
            ("agent_radius", self.agent_radius),
            ("timeout", self.timeout),
            ("goal threshold", self.thresholds.goal),
            ("collision threshold", self.thresholds.agent_collision),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bounds.min[0] >= self.bounds.max[0] || self.bounds.min[1] >= self.bounds.max[1] {
            return Err(Error::validation("arena bounds are empty"));
        }
        if let Some(wall) = &self.wall {
            if !(wall.thickness > 0.0) {
                return Err(Error::validation("wall thickness must be positive"));
            }
            if !(wall.passage_width > 2.0 * self.agent_radius) {
                return Err(Error::validation(format!(
                    "passage width {} does not admit an agent of radius {}",
                    wall.passage_width, self.agent_radius
                )));
            }
        }
        Ok(())
    }

    /// Number of ticks after which an episode times out.
    pub fn max_ticks(&self) -> u64 {
        (self.timeout / self.dt).round() as u64
    }
}

/// How the communication neighbourhood is derived from positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "params", rename_all = "snake_case")]
pub enum CommRule {
    Fixed { radius: f64 },
    Infinite,
    /// Radius drawn per ordered pair per tick from a normal distribution.
    Gaussian { mean: f64, stddev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommConfig {
    #[serde(flatten)]
    pub rule: CommRule,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            rule: CommRule::Fixed { radius: 2.0 },
            seed: 0,
        }
    }
}

impl CommConfig {
    pub fn validate(&self) -> Result<()> {
        match self.rule {
            CommRule::Fixed { radius } if !(radius > 0.0) => {
                Err(Error::validation("communication radius must be positive"))
            }
            CommRule::Gaussian { mean, stddev } if !(mean > 0.0 && stddev > 0.0) => Err(
                Error::validation("gaussian radius mean and stddev must be positive"),
            ),
            _ => Ok(()),
        }
    }
}
