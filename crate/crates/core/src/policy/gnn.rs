//! Message passing for the policy network.
//!
//! Each agent encodes its observation into a latent `h = enc(z)`, which is
//! also the message it broadcasts. The action is
//! `act( gnn(h_i - h_i) + sum_j gnn(h_i - h_j) )` over the senders `j` it
//! heard from, i.e. the neighbourhood with a self-loop. The sum is always
//! taken self first, then by ascending sender id, so the per-agent and the
//! whole-team evaluation produce bit-identical results.

use serde::{Deserialize, Serialize};

use super::mlp::{mlp_forward, MlpParams};
use super::weights::PolicyWeights;
use super::OBS_DIM;
use crate::geom::{self, Vec2};
use crate::world::graph::NeighborhoodGraph;
use crate::{AgentId, Error, Result};

/// `[p, p_g - p, p + v]`: absolute position, relative goal, predicted position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; OBS_DIM] = v.try_into().map_err(|_| Error::Shape {
            context: "observation",
            expected: OBS_DIM,
            got: v.len(),
        })?;
        if !arr.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: AgentId,
    /// Send time in seconds.
    pub timestamp: f64,
    pub payload: Vec<f64>,
}

impl Message {
    /// Little-endian `f64` encoding of the payload, for the wire.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.payload.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn payload_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Parse {
                offset: bytes.len() - bytes.len() % 8,
                message: "latent payload is not a whole number of f64".into(),
            });
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Desired planar velocity in m/s. Not clamped here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v_d: Vec2,
}

pub fn build_observation(p: Vec2, v: Vec2, p_goal: Vec2) -> Observation {
    let rel = geom::sub(p_goal, p);
    let pred = geom::add(p, v);
    Observation([p[0], p[1], rel[0], rel[1], pred[0], pred[1]])
}

pub fn encode(w: &PolicyWeights, z: &Observation) -> Result<Vec<f64>> {
    mlp_forward(&w.enc, z.as_slice())
}

/// `gnn(h_i - h_j)`. Edge features are accepted for the general message
/// signature but do not enter this model.
pub fn message_transform(
    w: &PolicyWeights,
    h_i: &[f64],
    h_j: &[f64],
    _edge: Option<Vec2>,
) -> Result<Vec<f64>> {
    difference_message(&w.gnn, h_i, h_j)
}

fn difference_message(net: &MlpParams, h_i: &[f64], h_j: &[f64]) -> Result<Vec<f64>> {
    if h_i.len() != h_j.len() {
        return Err(Error::Shape {
            context: "latent difference",
            expected: h_i.len(),
            got: h_j.len(),
        });
    }
    let diff: Vec<f64> = h_i.iter().zip(h_j).map(|(a, b)| a - b).collect();
    mlp_forward(net, &diff)
}

/// Element-wise sum in list order. An empty list sums to zeros of `dim`.
pub fn aggregate(transformed: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    for t in transformed {
        if t.len() != dim {
            return Err(Error::Shape {
                context: "aggregate",
                expected: dim,
                got: t.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Core per-agent update. `neighbors` must already be in ascending sender
/// order and must not contain the agent itself.
fn decide<'a>(
    w: &PolicyWeights,
    h_own: &[f64],
    neighbors: impl Iterator<Item = &'a [f64]>,
) -> Result<Action> {
    let mut transformed = vec![message_transform(w, h_own, h_own, None)?];
    for h_j in neighbors {
        if h_j.len() != w.latent_dim {
            return Err(Error::Shape {
                context: "neighbor payload",
                expected: w.latent_dim,
                got: h_j.len(),
            });
        }
        transformed.push(message_transform(w, h_own, h_j, None)?);
    }
    let agg = aggregate(&transformed, w.gnn.output_dim())?;
    let out = mlp_forward(&w.act, &agg)?;
    Ok(Action {
        v_d: [out[0], out[1]],
    })
}

/// Decentralised evaluation for one agent from the messages it holds.
/// Returns the action and the outgoing message (its own latent).
pub fn evaluate_local(
    w: &PolicyWeights,
    own: AgentId,
    now: f64,
    z_own: &Observation,
    neighbor_msgs: &[Message],
) -> Result<(Action, Message)> {
    let h_own = encode(w, z_own)?;
    let mut ordered: Vec<&Message> = neighbor_msgs.iter().collect();
    ordered.sort_by_key(|m| m.sender);
    for pair in ordered.windows(2) {
        if pair[0].sender == pair[1].sender {
            return Err(Error::validation(format!(
                "duplicate message from sender {}",
                pair[0].sender
            )));
        }
    }
    if ordered.iter().any(|m| m.sender == own) {
        return Err(Error::validation("neighbor messages must exclude self"));
    }
    let action = decide(w, &h_own, ordered.iter().map(|m| m.payload.as_slice()))?;
    Ok((
        action,
        Message {
            sender: own,
            timestamp: now,
            payload: h_own,
        },
    ))
}

fn check_counts(graph: &NeighborhoodGraph, n_obs: usize) -> Result<()> {
    if graph.len() != n_obs {
        return Err(Error::validation(format!(
            "graph has {} nodes but {} observations were given",
            graph.len(),
            n_obs
        )));
    }
    Ok(())
}

/// Synchronous whole-team evaluation. Observation `k` belongs to node
/// `graph.nodes[k]`.
pub fn evaluate_centralized(
    w: &PolicyWeights,
    all_obs: &[Observation],
    graph: &NeighborhoodGraph,
) -> Result<Vec<Action>> {
    check_counts(graph, all_obs.len())?;
    let latents = all_obs
        .iter()
        .map(|z| encode(w, z))
        .collect::<Result<Vec<_>>>()?;
    (0..all_obs.len())
        .map(|i| {
            let nbrs = graph.in_neighbor_indices(i);
            decide(w, &latents[i], nbrs.iter().map(|&j| latents[j].as_slice()))
        })
        .collect()
}

/// A message-passing layer for stacks deeper than one:
/// `h' = update( sum_j message(h_i - h_j) )` with self-loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLayer {
    pub message: MlpParams,
    pub update: MlpParams,
}

/// Runs `layers` rounds of message passing over `graph` starting from the
/// encoded observations. With a single `(gnn, act)` layer this is exactly
/// [`evaluate_centralized`].
pub fn propagate_centralized(
    enc: &MlpParams,
    layers: &[MessageLayer],
    all_obs: &[Observation],
    graph: &NeighborhoodGraph,
) -> Result<Vec<Vec<f64>>> {
    check_counts(graph, all_obs.len())?;
    let mut h = all_obs
        .iter()
        .map(|z| mlp_forward(enc, z.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    for layer in layers {
        let dim = layer.message.output_dim();
        h = (0..h.len())
            .map(|i| {
                let mut transformed = vec![difference_message(&layer.message, &h[i], &h[i])?];
                for j in graph.in_neighbor_indices(i) {
                    transformed.push(difference_message(&layer.message, &h[i], &h[*j])?);
                }
                mlp_forward(&layer.update, &aggregate(&transformed, dim)?)
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::super::mlp::{Activation, DenseLayer};
    use super::super::weights::{random_weights, PolicyDims};
    use super::*;

    fn identity_policy(dim: usize) -> PolicyWeights {
        // enc needs OBS_DIM inputs; use identity when dim == OBS_DIM.
        let enc = MlpParams::new(vec![DenseLayer::identity(OBS_DIM)]).unwrap();
        let gnn = MlpParams::new(vec![DenseLayer::identity(dim)]).unwrap();
        let mut w = vec![0.0; 2 * dim];
        w[0] = 1.0;
        w[dim + 1] = 1.0;
        let act = MlpParams::new(vec![DenseLayer::new(
            2,
            dim,
            w,
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        PolicyWeights::new(dim, enc, gnn, act).unwrap()
    }

    #[test]
    fn observation_layout() {
        assert_eq!(build_observation([0.0; 2], [0.0; 2], [0.0; 2]).0, [0.0; 6]);
        let z = build_observation([1.0, 2.0], [0.1, 0.0], [3.0, 2.0]);
        assert_eq!(z.0, [1.0, 2.0, 2.0, 0.0, 1.1, 2.0]);
        let z = build_observation([5.0, -5.0], [0.0, 1.0], [5.0, -5.0]);
        assert_eq!(z.0, [5.0, -5.0, 0.0, 0.0, 5.0, -4.0]);
    }

    #[test]
    fn observation_from_slice_checks_length_and_finiteness() {
        assert!(Observation::from_slice(&[0.0; 5]).is_err());
        assert!(Observation::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, f64::NAN]).is_err());
        assert!(Observation::from_slice(&[1.0; 6]).is_ok());
    }

    #[test]
    fn zero_encoder_gives_zero_latent() {
        let mut w = random_weights(2, &PolicyDims::default()).unwrap();
        for layer in &mut w.enc.layers {
            layer.weights.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let h = encode(&w, &build_observation([1.0, 2.0], [0.3, 0.1], [4.0, 4.0])).unwrap();
        assert_eq!(h, vec![0.0; 16]);
    }

    #[test]
    fn identity_encoder_reproduces_observation() {
        let w = identity_policy(OBS_DIM);
        let z = Observation([1.0, 2.0, 2.0, 0.0, 1.1, 2.0]);
        assert_eq!(encode(&w, &z).unwrap(), z.0.to_vec());
    }

    #[test]
    fn identity_message_transform_is_the_difference() {
        let gnn = MlpParams::new(vec![DenseLayer::identity(2)]).unwrap();
        assert_eq!(difference_message(&gnn, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        let w = random_weights(5, &PolicyDims::default()).unwrap();
        let h = vec![0.25; 16];
        assert_eq!(
            message_transform(&w, &h, &h, None).unwrap(),
            mlp_forward(&w.gnn, &[0.0; 16]).unwrap()
        );
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate(&[vec![1.0, 2.0]], 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(aggregate(&[vec![1.0, 2.0], vec![-1.0, -2.0]], 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(aggregate(&[], 3).unwrap(), vec![0.0; 3]);
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
    }

    #[test]
    fn isolated_agent_acts_on_zero_difference_only() {
        let w = random_weights(11, &PolicyDims::default()).unwrap();
        let z = build_observation([0.3, -1.0], [0.2, 0.2], [2.0, 0.0]);
        let (a, msg) = evaluate_local(&w, AgentId(0), 1.5, &z, &[]).unwrap();
        let expected = mlp_forward(&w.act, &mlp_forward(&w.gnn, &[0.0; 16]).unwrap()).unwrap();
        assert_eq!(a.v_d, [expected[0], expected[1]]);
        assert_eq!(msg.payload, encode(&w, &z).unwrap());
        assert_eq!(msg.timestamp, 1.5);
    }

    #[test]
    fn neighbor_with_identical_latent_doubles_the_self_term() {
        let w = random_weights(12, &PolicyDims::default()).unwrap();
        let z = build_observation([0.3, -1.0], [0.2, 0.2], [2.0, 0.0]);
        let h = encode(&w, &z).unwrap();
        let msg = Message {
            sender: AgentId(4),
            timestamp: 0.0,
            payload: h,
        };
        let (a, _) = evaluate_local(&w, AgentId(1), 0.0, &z, &[msg]).unwrap();
        let g0 = mlp_forward(&w.gnn, &[0.0; 16]).unwrap();
        let doubled: Vec<f64> = g0.iter().map(|v| v + v).collect();
        let expected = mlp_forward(&w.act, &doubled).unwrap();
        assert_eq!(a.v_d, [expected[0], expected[1]]);
    }

    #[test]
    fn self_message_and_duplicates_are_rejected() {
        let w = random_weights(1, &PolicyDims::default()).unwrap();
        let z = build_observation([0.0; 2], [0.0; 2], [1.0, 0.0]);
        let m = |s| Message {
            sender: AgentId(s),
            timestamp: 0.0,
            payload: vec![0.0; 16],
        };
        assert!(evaluate_local(&w, AgentId(1), 0.0, &z, &[m(1)]).is_err());
        assert!(evaluate_local(&w, AgentId(1), 0.0, &z, &[m(2), m(2)]).is_err());
        let short = Message {
            sender: AgentId(3),
            timestamp: 0.0,
            payload: vec![0.0; 3],
        };
        assert!(matches!(
            evaluate_local(&w, AgentId(1), 0.0, &z, &[short]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn payload_bytes_round_trip() {
        let m = Message {
            sender: AgentId(2),
            timestamp: 0.0,
            payload: vec![1.5, -0.0, f64::MIN_POSITIVE],
        };
        let back = Message::payload_from_bytes(&m.payload_bytes()).unwrap();
        assert_eq!(back, m.payload);
        assert!(Message::payload_from_bytes(&[0u8; 9]).is_err());
    }

    #[test]
    fn centralized_rejects_count_mismatch() {
        let w = random_weights(1, &PolicyDims::default()).unwrap();
        let g = NeighborhoodGraph::empty(vec![AgentId(0), AgentId(1)]);
        let z = build_observation([0.0; 2], [0.0; 2], [1.0, 0.0]);
        assert!(evaluate_centralized(&w, &[z], &g).is_err());
    }

    #[test]
    fn single_layer_stack_matches_centralized() {
        let w = random_weights(9, &PolicyDims::default()).unwrap();
        let positions = [[0.0, 0.0], [1.0, 0.5], [5.0, 5.0]];
        let obs: Vec<_> = positions
            .iter()
            .map(|&p| build_observation(p, [0.1, 0.0], [2.0, 2.0]))
            .collect();
        let ids = (0..3).map(AgentId).collect();
        let g = NeighborhoodGraph::from_rule(ids, &positions, |d| d <= 2.0);
        let layer = MessageLayer {
            message: w.gnn.clone(),
            update: w.act.clone(),
        };
        let deep = propagate_centralized(&w.enc, &[layer], &obs, &g).unwrap();
        let flat = evaluate_centralized(&w, &obs, &g).unwrap();
        for (d, a) in deep.iter().zip(&flat) {
            assert_eq!(d.as_slice(), &a.v_d);
        }
    }

    #[test]
    fn two_layer_stack_propagates_two_hops() {
        // Identity encoder and message nets, sum update: after two rounds on a
        // path 0-1-2, node 0 depends on node 2.
        let enc = MlpParams::new(vec![DenseLayer::identity(OBS_DIM)]).unwrap();
        let layer = MessageLayer {
            message: MlpParams::new(vec![DenseLayer::identity(OBS_DIM)]).unwrap(),
            update: MlpParams::new(vec![DenseLayer::identity(OBS_DIM)]).unwrap(),
        };
        let positions = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let ids = (0..3).map(AgentId).collect();
        let g = NeighborhoodGraph::from_rule(ids, &positions, |d| d <= 1.0);
        let run = |p2: f64| {
            let obs: Vec<_> = [[0.0, 0.0], [1.0, 0.0], [p2, 0.0]]
                .iter()
                .map(|&p| build_observation(p, [0.0; 2], [0.0; 2]))
                .collect();
            let one = propagate_centralized(&enc, &[layer.clone()], &obs, &g).unwrap();
            let two = propagate_centralized(&enc, &[layer.clone(), layer.clone()], &obs, &g).unwrap();
            (one[0].clone(), two[0].clone())
        };
        let (one_a, two_a) = run(2.0);
        let (one_b, two_b) = run(2.5);
        assert_eq!(one_a, one_b);
        assert_ne!(two_a, two_b);
    }
}
