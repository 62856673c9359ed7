use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{CommConfig, CommRule};
use crate::geom::{self, Vec2};
use crate::rng::keyed_rng;
use crate::AgentId;

/// Directed edge `from -> to`: `to` hears `from`. The feature is the
/// relative position `p_from - p_to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: AgentId,
    pub to: AgentId,
    pub feature: Vec2,
}

/// Communication graph for one tick. Self-loops are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphRepr", try_from = "GraphRepr")]
pub struct NeighborhoodGraph {
    pub nodes: Vec<AgentId>,
    pub edges: Vec<Edge>,
    incoming: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<AgentId>,
    edges: Vec<Edge>,
}

impl From<NeighborhoodGraph> for GraphRepr {
    fn from(g: NeighborhoodGraph) -> Self {
        Self {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphRepr> for NeighborhoodGraph {
    type Error = String;

    fn try_from(r: GraphRepr) -> std::result::Result<Self, String> {
        let mut incoming = vec![Vec::new(); r.nodes.len()];
        let index = |id: AgentId| {
            r.nodes
                .iter()
                .position(|&n| n == id)
                .ok_or_else(|| format!("edge references unknown node {id}"))
        };
        for e in &r.edges {
            let (j, i) = (index(e.from)?, index(e.to)?);
            if i == j {
                return Err(format!("self-edge on node {}", e.to));
            }
            incoming[i].push(j);
        }
        for list in &mut incoming {
            list.sort_by_key(|&j| r.nodes[j]);
            list.dedup();
        }
        Ok(Self {
            nodes: r.nodes,
            edges: r.edges,
            incoming,
        })
    }
}

impl NeighborhoodGraph {
    pub fn empty(nodes: Vec<AgentId>) -> Self {
        let incoming = vec![Vec::new(); nodes.len()];
        Self {
            nodes,
            edges: Vec::new(),
            incoming,
        }
    }

    /// Builds a graph with an edge `j -> i` wherever `keep(i, j, distance)`.
    fn build(nodes: Vec<AgentId>, positions: &[Vec2], mut keep: impl FnMut(usize, usize, f64) -> bool) -> Self {
        assert_eq!(nodes.len(), positions.len(), "one position per node");
        let mut incoming = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in 0..nodes.len() {
                if i != j && keep(i, j, geom::dist(positions[i], positions[j])) {
                    incoming[i].push(j);
                }
            }
            incoming[i].sort_by_key(|&j| nodes[j]);
            for &j in &incoming[i] {
                edges.push(Edge {
                    from: nodes[j],
                    to: nodes[i],
                    feature: geom::sub(positions[j], positions[i]),
                });
            }
        }
        Self {
            nodes,
            edges,
            incoming,
        }
    }

    /// Symmetric distance rule, convenient for tests.
    pub fn from_rule(nodes: Vec<AgentId>, positions: &[Vec2], rule: impl Fn(f64) -> bool) -> Self {
        Self::build(nodes, positions, |_, _, d| rule(d))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Indices of nodes heard by node `i`, by ascending id.
    pub fn in_neighbor_indices(&self, i: usize) -> &[usize] {
        &self.incoming[i]
    }

    /// Ids heard by node `i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<AgentId> {
        self.incoming[i].iter().map(|&j| self.nodes[j]).collect()
    }

    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        match (self.index_of(from), self.index_of(to)) {
            (Some(j), Some(i)) => self.incoming[i].contains(&j),
            _ => false,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Communication graph under `comm` for tick `tick`. Gaussian radii are
/// drawn independently for each ordered pair and tick, keyed by
/// `(seed, tick, from, to)`.
pub fn compute_neighborhood(
    ids: &[AgentId],
    positions: &[Vec2],
    comm: &CommConfig,
    tick: u64,
) -> NeighborhoodGraph {
    match comm.rule {
        CommRule::Fixed { radius } => {
            NeighborhoodGraph::build(ids.to_vec(), positions, |_, _, d| d <= radius)
        }
        CommRule::Infinite => NeighborhoodGraph::build(ids.to_vec(), positions, |_, _, _| true),
        CommRule::Gaussian { mean, stddev } => {
            let normal = Normal::new(mean, stddev).expect("validated gaussian parameters");
            NeighborhoodGraph::build(ids.to_vec(), positions, |i, j, d| {
                let mut rng = keyed_rng(&[comm.seed, tick, ids[j].0 as u64, ids[i].0 as u64]);
                let r = normal.sample(&mut rng).max(0.0);
                d <= r
            })
        }
    }
}
