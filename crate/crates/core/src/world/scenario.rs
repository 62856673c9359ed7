use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Bounds, CommConfig, CommRule, WorldConfig};
use super::dynamics::hits_geometry;
use crate::geom::{self, Vec2};
use crate::rng::keyed_rng;
use crate::{Error, Result};

/// Starts, cyclic goal sets and the world they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub starts: Vec<Vec2>,
    pub goal_sets: Vec<Vec<Vec2>>,
    /// Later episodes start where the previous one's goals were.
    #[serde(default = "yes")]
    pub chaining: bool,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub comm: CommConfig,
}

fn yes() -> bool {
    true
}

/// Offsets of the cross formation around its centre, in fill order.
fn cross_slots(n: usize) -> Result<Vec<Vec2>> {
    let mut slots = vec![[0.0, 0.0]];
    let mut arm = 1.0;
    while slots.len() < n {
        slots.extend([[-arm, 0.0], [arm, 0.0], [0.0, arm], [0.0, -arm]]);
        arm += 1.0;
        if arm > 2.0 {
            break;
        }
    }
    if n == 0 || n > slots.len() {
        return Err(Error::validation(format!(
            "cross formation supports 1..={} agents, got {n}",
            slots.len()
        )));
    }
    slots.truncate(n);
    Ok(slots)
}

impl ScenarioSpec {
    /// Agents start in a cross left of the wall and alternate sides every
    /// episode; each goal set assigns agents to the opposite cross in a
    /// different (seeded) order.
    pub fn passage(n: usize, episodes: usize) -> Result<Self> {
        let slots = cross_slots(n)?;
        let side = |sign: f64| -> Vec<Vec2> { slots.iter().map(|o| [sign * 2.0 + o[0], o[1]]).collect() };
        let starts = side(-1.0);
        let goal_sets = (0..episodes)
            .map(|e| {
                let mut target = side(if e % 2 == 0 { 1.0 } else { -1.0 });
                if e >= 2 {
                    target.shuffle(&mut keyed_rng(&[0x9A55, e as u64]));
                }
                target
            })
            .collect();
        let spec = Self {
            n,
            starts,
            goal_sets,
            chaining: true,
            world: WorldConfig::default(),
            comm: CommConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Agents on a circle swap to (slightly rotated) antipodal points each
    /// episode. No wall; relative goals of the team sum to zero.
    pub fn circle_swap(n: usize, radius: f64, episodes: usize) -> Result<Self> {
        if episodes == 0 || episodes % 2 != 0 {
            return Err(Error::validation("circle swap needs an even number of goal sets"));
        }
        let step = std::f64::consts::TAU / episodes as f64;
        let ring = |turn: usize| -> Vec<Vec2> {
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64
                        + turn as f64 * (std::f64::consts::PI + step);
                    [radius * a.cos(), radius * a.sin()]
                })
                .collect()
        };
        let extent = radius + 1.5;
        let spec = Self {
            n,
            starts: ring(0),
            goal_sets: (1..=episodes).map(ring).collect(),
            chaining: true,
            world: WorldConfig {
                wall: None,
                bounds: Bounds {
                    min: [-extent, -extent],
                    max: [extent, extent],
                },
                ..WorldConfig::default()
            },
            comm: CommConfig {
                rule: CommRule::Infinite,
                seed: 0,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` (even) agents on seeded random sites inside `[-extent, extent]^2`
    /// that come in mirror pairs `s, -s`. Every goal set is a seeded
    /// derangement of the sites that commutes with the mirror, so the
    /// team's relative goals sum to zero and, with an exact policy, its
    /// centroid stays at the origin. Chained episodes reuse the sites. No wall.
    pub fn shuffle(n: usize, extent: f64, episodes: usize, seed: u64) -> Result<Self> {
        if n < 2 || n % 2 != 0 || episodes == 0 {
            return Err(Error::validation(
                "shuffle needs an even number of agents and at least one episode",
            ));
        }
        let m = n / 2;
        let spacing = 1.2;
        let mut rng = keyed_rng(&[0x5_4F1E, seed]);
        let mut half: Vec<Vec2> = Vec::with_capacity(m);
        let mut tries = 0;
        while half.len() < m {
            tries += 1;
            if tries > 100_000 {
                return Err(Error::validation(format!(
                    "cannot place {n} sites {spacing} m apart within +-{extent} m"
                )));
            }
            let c = [rng.random_range(-extent..=extent), rng.random_range(-extent..=extent)];
            let ok = geom::norm(c) * 2.0 >= spacing
                && half
                    .iter()
                    .all(|q| geom::dist(*q, c) >= spacing && geom::dist(geom::scale(*q, -1.0), c) >= spacing);
            if ok {
                half.push(c);
            }
        }
        let sites: Vec<Vec2> = half
            .iter()
            .copied()
            .chain(half.iter().map(|q| geom::scale(*q, -1.0)))
            .collect();
        let mirror = |k: usize| (k + m) % n;
        // order[k] is the site agent k occupies; the mirror of agent k is k + m.
        let mut order: Vec<usize> = (0..n).collect();
        let mut goal_sets = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let prev = order.clone();
            loop {
                let mut pairs: Vec<usize> = (0..m).collect();
                pairs.shuffle(&mut rng);
                for k in 0..m {
                    let site = if rng.random::<bool>() { pairs[k] } else { mirror(pairs[k]) };
                    order[k] = site;
                    order[k + m] = mirror(site);
                }
                if order.iter().zip(&prev).all(|(a, b)| a != b) {
                    break;
                }
            }
            goal_sets.push(order.iter().map(|&k| sites[k]).collect());
        }
        let margin = extent + 1.0;
        let spec = Self {
            n,
            starts: sites,
            goal_sets,
            chaining: true,
            world: WorldConfig {
                wall: None,
                bounds: Bounds {
                    min: [-margin, -margin],
                    max: [margin, margin],
                },
                ..WorldConfig::default()
            },
            comm: CommConfig {
                rule: CommRule::Infinite,
                seed,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.comm.validate()?;
        if self.n == 0 {
            return Err(Error::validation("scenario needs at least one agent"));
        }
        if self.goal_sets.is_empty() {
            return Err(Error::validation("scenario needs at least one goal set"));
        }
        self.check_layout("starts", &self.starts)?;
        for (k, g) in self.goal_sets.iter().enumerate() {
            self.check_layout(&format!("goal set {k}"), g)?;
        }
        Ok(())
    }

    fn check_layout(&self, what: &str, pts: &[Vec2]) -> Result<()> {
        if pts.len() != self.n {
            return Err(Error::validation(format!(
                "{what} has {} positions for {} agents",
                pts.len(),
                self.n
            )));
        }
        let thr = self.world.thresholds.agent_collision;
        for (i, a) in pts.iter().enumerate() {
            if !geom::is_finite(*a) {
                return Err(Error::NonFinite("scenario position"));
            }
            if hits_geometry(*a, self.world.agent_radius, &self.world) {
                return Err(Error::validation(format!("{what}: position {i} overlaps wall or bounds")));
            }
            for (j, b) in pts.iter().enumerate().skip(i + 1) {
                if geom::dist(*a, *b) <= thr {
                    return Err(Error::validation(format!(
                        "{what}: positions {i} and {j} are within the collision threshold"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn episodes(&self) -> usize {
        self.goal_sets.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Starts and goals of episode `episode_index`. Goal sets are used
/// cyclically; with chaining, every episode after the first starts at the
/// previous episode's goals.
pub fn spawn_scenario(
    spec: &ScenarioSpec,
    episode_index: usize,
    previous_goals: Option<&[Vec2]>,
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    let goals = spec.goal_sets[episode_index % spec.goal_sets.len()].clone();
    let starts = if episode_index == 0 || !spec.chaining {
        spec.starts.clone()
    } else {
        let prev = previous_goals
            .ok_or_else(|| Error::validation("chained episode needs the previous goals"))?;
        prev.to_vec()
    };
    if starts.len() != spec.n || goals.len() != spec.n {
        return Err(Error::validation(format!(
            "expected {} agents, got {} starts and {} goals",
            spec.n,
            starts.len(),
            goals.len()
        )));
    }
    Ok((starts, goals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passage_starts_in_cross_left_of_wall() {
        let s = ScenarioSpec::passage(5, 16).unwrap();
        assert_eq!(
            s.starts,
            vec![[-2.0, 0.0], [-3.0, 0.0], [-1.0, 0.0], [-2.0, 1.0], [-2.0, -1.0]]
        );
        assert!(s.goal_sets[0].iter().all(|g| g[0] > 0.0));
        assert!(s.goal_sets[1].iter().all(|g| g[0] < 0.0));
        let (starts, _) = spawn_scenario(&s, 0, None).unwrap();
        assert_eq!(starts, s.starts);
    }

    #[test]
    fn chaining_and_cyclic_goals() {
        let s = ScenarioSpec::passage(5, 4).unwrap();
        let (_, g0) = spawn_scenario(&s, 0, None).unwrap();
        let (st1, g1) = spawn_scenario(&s, 1, Some(&g0)).unwrap();
        assert_eq!(st1, g0);
        assert_eq!(g1, s.goal_sets[1]);
        let (_, g4) = spawn_scenario(&s, 4, Some(&s.goal_sets[3])).unwrap();
        assert_eq!(g4, s.goal_sets[0]);
        assert!(spawn_scenario(&s, 2, None).is_err());
        assert!(spawn_scenario(&s, 2, Some(&g0[..3])).is_err());
    }

    #[test]
    fn circle_swap_goals_are_antipodal_and_balanced() {
        let s = ScenarioSpec::circle_swap(5, 2.0, 16).unwrap();
        let mut prev = s.starts.clone();
        for e in 0..32 {
            let (st, g) = spawn_scenario(&s, e, Some(&prev)).unwrap();
            let sum = g.iter().zip(&st).fold([0.0, 0.0], |acc, (g, p)| {
                [acc[0] + g[0] - p[0], acc[1] + g[1] - p[1]]
            });
            assert!(geom::norm(sum) < 1e-9, "episode {e}: {sum:?}");
            for (a, b) in st.iter().zip(&g) {
                assert!(geom::dist(*a, *b) > 3.9);
            }
            prev = g;
        }
    }

    #[test]
    fn layout_validation_rejects_overlaps_and_wall() {
        let mut s = ScenarioSpec::passage(5, 2).unwrap();
        s.starts[1] = [-2.1, 0.0];
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec::passage(5, 2).unwrap();
        s.goal_sets[0][0] = [0.0, 2.0];
        assert!(s.validate().is_err());
        assert!(ScenarioSpec::passage(0, 2).is_err());
        assert!(ScenarioSpec::passage(12, 2).is_err());
    }

    #[test]
    fn scenario_file_round_trip() {
        let s = ScenarioSpec::passage(5, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
        assert_eq!(ScenarioSpec::load(&path).unwrap(), s);
        let v = serde_json::to_value(&s).unwrap();
        for key in ["n", "starts", "goal_sets", "world", "comm"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["world"].get("timeout").is_some());
        assert!(v["world"].get("thresholds").is_some());
    }

    #[test]
    fn shuffle_goals_are_derangements_of_the_sites() {
        let s = ScenarioSpec::shuffle(6, 2.5, 10, 3).unwrap();
        let mut prev = s.starts.clone();
        for e in 0..10 {
            let (st, g) = spawn_scenario(&s, e, Some(&prev)).unwrap();
            assert!(st.iter().zip(&g).all(|(a, b)| a != b));
            let mut a = g.clone();
            let mut b = s.starts.clone();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(a, b);
            prev = g;
        }
        assert_eq!(ScenarioSpec::shuffle(6, 2.5, 10, 3).unwrap(), s);
        for g in &s.goal_sets {
            for k in 0..3 {
                assert_eq!(g[k + 3], geom::scale(g[k], -1.0));
            }
        }
        assert!(ScenarioSpec::shuffle(40, 1.0, 1, 0).is_err());
        assert!(ScenarioSpec::shuffle(5, 3.0, 1, 0).is_err());
    }
}
