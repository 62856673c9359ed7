//! A hand-constructed policy expressed in the regular three-network format.
//!
//! Training is outside this crate, yet experiments need a policy whose
//! behaviour is goal-directed and sensitive to communication quality. The
//! weights below implement, exactly, the following controller on top of the
//! identity encoder `h = z`:
//!
//! * consensus goal term `sum_j (r_i - r_j)` over heard neighbours, where
//!   `r` is the relative goal. When the team's relative goals sum to zero
//!   (e.g. antipodal swaps) and everyone is heard, this is proportional to
//!   `r_i`. Missing or stale neighbours bias it.
//!   The goal velocity is clipped per axis.
//! * repulsion between predicted positions `q = p + v`, built from eight
//!   piecewise-linear tents (one per 45 degree sector) and rotated by a fixed
//!   angle so symmetric encounters resolve by circulating.
//!
//! The message of an isolated agent is `gnn(0) = 0`, so it stands still.

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, DenseLayer, MlpParams};
use super::weights::PolicyWeights;
use super::OBS_DIM;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceGains {
    /// Velocity per metre of summed relative-goal difference.
    pub goal: f64,
    /// Velocity per unit tent activation.
    pub repulsion: f64,
    /// Predicted-position distance (m) beyond which neighbours do not repel.
    pub range: f64,
    /// Rotation applied to the repulsive push, degrees counter-clockwise.
    pub rotation_deg: f64,
    /// Per-axis bound on the goal velocity (m/s).
    pub goal_cap: f64,
}

impl Default for ReferenceGains {
    fn default() -> Self {
        Self {
            goal: 0.2,
            repulsion: 3.0,
            range: 1.5,
            rotation_deg: 30.0,
            goal_cap: 0.6,
        }
    }
}

const SECTORS: usize = 8;

fn sector_dir(k: usize) -> [f64; 2] {
    // Exact values for the axis and diagonal directions.
    let d = std::f64::consts::FRAC_1_SQRT_2;
    match k % SECTORS {
        0 => [1.0, 0.0],
        1 => [d, d],
        2 => [0.0, 1.0],
        3 => [-d, d],
        4 => [-1.0, 0.0],
        5 => [-d, -d],
        6 => [0.0, -1.0],
        _ => [d, -d],
    }
}

pub fn reference_weights(gains: &ReferenceGains) -> Result<PolicyWeights> {
    let latent = OBS_DIM;
    let enc = MlpParams::new(vec![DenseLayer::identity(OBS_DIM)])?;

    // Latent difference layout: [dp_x, dp_y, dr_x, dr_y, dq_x, dq_y].
    let (drx, dry, dqx, dqy) = (2, 3, 4, 5);
    let peak = 1.0;
    let core = gains.range / 3.0;
    let along = peak / (gains.range - core);
    let behind = 4.0 * peak / gains.range;
    let across = peak / (0.45 * gains.range);

    // Layer 1: goal halves, sector projections, sector projections past core.
    let h1 = 4 + 2 * SECTORS;
    let mut w1 = vec![0.0; h1 * latent];
    let mut b1 = vec![0.0; h1];
    w1[drx] = 1.0;
    w1[latent + drx] = -1.0;
    w1[2 * latent + dry] = 1.0;
    w1[3 * latent + dry] = -1.0;
    for k in 0..SECTORS {
        let u = sector_dir(k);
        let s = 4 + k;
        w1[s * latent + dqx] = u[0];
        w1[s * latent + dqy] = u[1];
        let a = 4 + SECTORS + k;
        w1[a * latent + dqx] = u[0];
        w1[a * latent + dqy] = u[1];
        b1[a] = -core;
    }
    let l1 = DenseLayer::new(h1, latent, w1, b1, Activation::Relu)?;

    // Layer 2: goal halves passed through, one tent per sector.
    let h2 = 4 + SECTORS;
    let mut w2 = vec![0.0; h2 * h1];
    let mut b2 = vec![0.0; h2];
    for g in 0..4 {
        w2[g * h1 + g] = 1.0;
    }
    for k in 0..SECTORS {
        let row = (4 + k) * h1;
        b2[4 + k] = peak;
        w2[row + 4 + SECTORS + k] = -along;
        w2[row + 4 + (k + 4) % SECTORS] = -behind;
        w2[row + 4 + (k + 2) % SECTORS] = -across;
        w2[row + 4 + (k + 6) % SECTORS] = -across;
    }
    let l2 = DenseLayer::new(h2, h1, w2, b2, Activation::Relu)?;

    // Layer 3: [goal_x, goal_y, push_x, push_y].
    let (sin, cos) = gains.rotation_deg.to_radians().sin_cos();
    let mut w3 = vec![0.0; 4 * h2];
    w3[0] = 1.0;
    w3[1] = -1.0;
    w3[h2 + 2] = 1.0;
    w3[h2 + 3] = -1.0;
    for k in 0..SECTORS {
        let u = sector_dir(k);
        w3[2 * h2 + 4 + k] = cos * u[0] - sin * u[1];
        w3[3 * h2 + 4 + k] = sin * u[0] + cos * u[1];
    }
    let l3 = DenseLayer::new(4, h2, w3, vec![0.0; 4], Activation::Identity)?;
    let gnn = MlpParams::new(vec![l1, l2, l3])?;

    // ACT: v = clamp(goal * g, -cap, cap) + repulsion * push, the clamp
    // written as relu(x + c) - relu(x - c) - c.
    let (g, c, r) = (gains.goal, gains.goal_cap, gains.repulsion);
    #[rustfmt::skip]
    let a1 = DenseLayer::new(
        8,
        4,
        vec![
            g, 0.0, 0.0, 0.0,
            g, 0.0, 0.0, 0.0,
            0.0, g, 0.0, 0.0,
            0.0, g, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, -1.0,
        ],
        vec![c, -c, c, -c, 0.0, 0.0, 0.0, 0.0],
        Activation::Relu,
    )?;
    #[rustfmt::skip]
    let a2 = DenseLayer::new(
        2,
        8,
        vec![
            1.0, -1.0, 0.0, 0.0, r, -r, 0.0, 0.0,
            0.0, 0.0, 1.0, -1.0, 0.0, 0.0, r, -r,
        ],
        vec![-c, -c],
        Activation::Identity,
    )?;
    let act = MlpParams::new(vec![a1, a2])?;
    PolicyWeights::new(latent, enc, gnn, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{build_observation, evaluate_local, mlp_forward, Message};
    use crate::AgentId;

    fn weights() -> PolicyWeights {
        reference_weights(&ReferenceGains::default()).unwrap()
    }

    #[test]
    fn zero_difference_message_is_negligible() {
        let w = weights();
        let out = mlp_forward(&w.gnn, &[0.0; 6]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn goal_channel_is_linear_in_relative_goal_difference() {
        let w = weights();
        let out = mlp_forward(&w.gnn, &[0.0, 0.0, 1.5, -2.0, 5.0, 5.0]).unwrap();
        assert_eq!(&out[..2], &[1.5, -2.0]);
        assert_eq!(&out[2..], &[0.0, 0.0], "far neighbours do not repel");
    }

    #[test]
    fn close_neighbor_pushes_away() {
        let w = weights();
        // Neighbour directly to the left (dq = q_i - q_j points +x).
        let out = mlp_forward(&w.gnn, &[0.0, 0.0, 0.0, 0.0, 0.3, 0.0]).unwrap();
        let push = [out[2], out[3]];
        let rot = ReferenceGains::default().rotation_deg.to_radians();
        assert!(push[0] > 0.0);
        let angle = push[1].atan2(push[0]);
        assert!((angle - rot).abs() < 0.3, "angle {angle}");
    }

    #[test]
    fn pair_with_opposite_goals_moves_towards_goals() {
        let w = weights();
        let za = build_observation([-2.0, 0.0], [0.0; 2], [2.0, 0.0]);
        let zb = build_observation([2.0, 0.0], [0.0; 2], [-2.0, 0.0]);
        let hb = crate::policy::encode(&w, &zb).unwrap();
        let msg = Message {
            sender: AgentId(1),
            timestamp: 0.0,
            payload: hb,
        };
        let (a, _) = evaluate_local(&w, AgentId(0), 0.0, &za, &[msg]).unwrap();
        assert!(a.v_d[0] > 0.0);
        assert!(a.v_d[1].abs() < 1e-12);
    }
}
