//! Proposal graph construction.
//!
//! Two proposals are joined by a *contextual* edge when their tIoU exceeds
//! `theta_ctx`, and by a *surrounding* edge when they are disjoint and their
//! normalized center distance is below `theta_sur`. Each node then keeps a
//! bounded number of neighbors per edge kind, and every kept edge is weighted
//! by the non-negative cosine similarity of the two proposal features.
//!
//! Edge direction: an edge `src -> dst` means `src` is aggregated into `dst`.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::interval::{surround_distance, tiou, Interval};
use crate::par;
use crate::proposal::ProposalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Contextual,
    Surrounding,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Contextual => "contextual",
            EdgeKind::Surrounding => "surrounding",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub weight: f64,
}

/// A neighbor `node` aggregated into the owning node with coefficient `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// A pre-cap candidate: `neighbor` may be aggregated into `node`. `score` is
/// the tIoU for contextual candidates and the surrounding distance otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCandidate {
    pub node: usize,
    pub neighbor: usize,
    pub score: f64,
}

/// Per-node neighbor budget for each edge kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborQuota {
    pub contextual: usize,
    pub surrounding: usize,
}

impl NeighborQuota {
    /// Splits `max_neighbors` by `ratio` (contextual:surrounding). The
    /// contextual share is rounded down; the remainder goes to surrounding.
    pub fn from_ratio(max_neighbors: usize, ratio: (usize, usize)) -> Self {
        let contextual = max_neighbors * ratio.0 / (ratio.0 + ratio.1);
        Self {
            contextual,
            surrounding: max_neighbors - contextual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub theta_ctx: f64,
    pub theta_sur: f64,
    pub max_neighbors: usize,
    pub ctx_sur_ratio: (usize, usize),
    /// Emit contextual edges.
    pub contextual: bool,
    /// Emit surrounding edges.
    pub surrounding: bool,
    /// Apply the per-node neighbor cap. When false every candidate is kept.
    pub cap: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            theta_ctx: 0.7,
            theta_sur: 1.0,
            max_neighbors: 10,
            ctx_sur_ratio: (4, 1),
            contextual: true,
            surrounding: true,
            cap: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta_ctx) {
            return Err(Error::Config(format!(
                "theta_ctx must lie in [0, 1), got {}",
                self.theta_ctx
            )));
        }
        if !(self.theta_sur > 0.0 && self.theta_sur.is_finite()) {
            return Err(Error::Config(format!(
                "theta_sur must be positive, got {}",
                self.theta_sur
            )));
        }
        if self.max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be positive".into()));
        }
        if self.ctx_sur_ratio.0 == 0 || self.ctx_sur_ratio.1 == 0 {
            return Err(Error::Config(format!(
                "edge ratio parts must be positive, got {}:{}",
                self.ctx_sur_ratio.0, self.ctx_sur_ratio.1
            )));
        }
        Ok(())
    }

    pub fn quota(&self) -> Option<NeighborQuota> {
        self.cap
            .then(|| NeighborQuota::from_ratio(self.max_neighbors, self.ctx_sur_ratio))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGraph {
    edges: Vec<Edge>,
    neighbors: Vec<Vec<Neighbor>>,
}

impl ProposalGraph {
    /// Assembles a graph from explicit per-node neighbor lists.
    pub fn from_neighbors(neighbors: Vec<Vec<Neighbor>>) -> Result<Self> {
        let n = neighbors.len();
        let mut edges = Vec::new();
        for (dst, list) in neighbors.iter().enumerate() {
            for nb in list {
                if nb.node >= n || nb.node == dst {
                    return Err(Error::Config(format!(
                        "invalid neighbor {} for node {dst}",
                        nb.node
                    )));
                }
                edges.push(Edge {
                    src: nb.node,
                    dst,
                    kind: nb.kind,
                    weight: nb.weight,
                });
            }
        }
        Ok(Self { edges, neighbors })
    }

    /// A graph with no edges.
    pub fn isolated(num_nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            neighbors: vec![Vec::new(); num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[Neighbor] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Writes one `src dst kind weight` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.edges {
            writeln!(out, "{} {} {} {:.6}", e.src, e.dst, e.kind, e.weight)?;
        }
        Ok(())
    }
}

/// Node order by center, with the largest proposal length, used to bound the
/// pair search window.
struct CenterIndex {
    order: Vec<usize>,
    centers: Vec<f64>,
    max_len: f64,
}

impl CenterIndex {
    fn new(intervals: &[Interval]) -> Self {
        let mut order: Vec<usize> = (0..intervals.len()).collect();
        order.sort_by(|&a, &b| {
            intervals[a]
                .center()
                .total_cmp(&intervals[b].center())
                .then(a.cmp(&b))
        });
        let centers = order.iter().map(|&i| intervals[i].center()).collect();
        let max_len = intervals
            .iter()
            .map(Interval::length)
            .fold(0.0, f64::max);
        Self {
            order,
            centers,
            max_len,
        }
    }

    /// Nodes whose center lies strictly within `radius` of `center`, ascending by id.
    fn within(&self, center: f64, radius: f64) -> Vec<usize> {
        let lo = self.centers.partition_point(|&c| c <= center - radius);
        let hi = self.centers.partition_point(|&c| c < center + radius);
        let mut ids: Vec<usize> = self.order[lo..hi].to_vec();
        ids.sort_unstable();
        ids
    }
}

fn collect_candidates<F>(intervals: &[Interval], radius_factor: f64, accept: F) -> Vec<EdgeCandidate>
where
    F: Fn(&Interval, &Interval) -> Option<f64> + Sync + Send,
{
    let index = CenterIndex::new(intervals);
    par::map_range(intervals.len(), |i| {
        let a = &intervals[i];
        // Any accepted pair has |c_a - c_b| < radius_factor * (l_a + l_b).
        let radius = radius_factor * (a.length() + index.max_len) * (1.0 + 1e-9) + 1e-12;
        index
            .within(a.center(), radius)
            .into_iter()
            .filter(|&j| j != i)
            .filter_map(|j| {
                accept(a, &intervals[j]).map(|score| EdgeCandidate {
                    node: i,
                    neighbor: j,
                    score,
                })
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// All ordered pairs with tIoU strictly above `theta_ctx`, sorted by `(node, neighbor)`.
pub fn find_contextual_edges(intervals: &[Interval], theta_ctx: f64) -> Vec<EdgeCandidate> {
    // Overlap requires |c_a - c_b| < (l_a + l_b) / 2.
    collect_candidates(intervals, 0.5, |a, b| {
        let r = tiou(a, b);
        (r > theta_ctx).then_some(r)
    })
}

/// All ordered disjoint pairs with surrounding distance strictly below
/// `theta_sur`, sorted by `(node, neighbor)`.
pub fn find_surrounding_edges(intervals: &[Interval], theta_sur: f64) -> Vec<EdgeCandidate> {
    // d < theta_sur with disjoint intervals implies |c_a - c_b| < theta_sur * (l_a + l_b).
    collect_candidates(intervals, theta_sur, |a, b| {
        if tiou(a, b) != 0.0 {
            return None;
        }
        let d = surround_distance(a, b);
        (d < theta_sur).then_some(d)
    })
}

fn group_by_node(num_nodes: usize, candidates: &[EdgeCandidate]) -> Vec<Vec<EdgeCandidate>> {
    let mut grouped = vec![Vec::new(); num_nodes];
    for c in candidates {
        grouped[c.node].push(*c);
    }
    grouped
}

/// Selects each node's neighbors: the contextual candidates with the largest
/// tIoU and the surrounding candidates with the smallest distance, up to the
/// quota of each kind. Unused quota is not transferred between kinds, and ties
/// go to the lower neighbor id. With `quota == None` all candidates are kept.
pub fn cap_neighbors(
    num_nodes: usize,
    contextual: &[EdgeCandidate],
    surrounding: &[EdgeCandidate],
    quota: Option<NeighborQuota>,
) -> Vec<Vec<(usize, EdgeKind)>> {
    let ctx = group_by_node(num_nodes, contextual);
    let sur = group_by_node(num_nodes, surrounding);
    ctx.into_iter()
        .zip(sur)
        .map(|(mut c, mut s)| {
            c.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.neighbor.cmp(&b.neighbor))
            });
            s.sort_by(|a, b| {
                a.score
                    .total_cmp(&b.score)
                    .then(a.neighbor.cmp(&b.neighbor))
            });
            if let Some(q) = quota {
                c.truncate(q.contextual);
                s.truncate(q.surrounding);
            }
            c.iter()
                .map(|e| (e.neighbor, EdgeKind::Contextual))
                .chain(s.iter().map(|e| (e.neighbor, EdgeKind::Surrounding)))
                .collect()
        })
        .collect()
}

/// Cosine similarity clamped below at zero. A zero vector has weight 0.
pub fn adjacency_weight(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cos = a.dot(&b) / (na * nb);
    // rounding can push identical directions a hair past 1
    cos.clamp(0.0, 1.0)
}

pub fn build_graph(proposals: &ProposalSet, config: &GraphConfig) -> Result<ProposalGraph> {
    config.validate()?;
    let intervals = proposals.intervals();
    let n = intervals.len();
    let contextual = if config.contextual {
        find_contextual_edges(&intervals, config.theta_ctx)
    } else {
        Vec::new()
    };
    let surrounding = if config.surrounding {
        find_surrounding_edges(&intervals, config.theta_sur)
    } else {
        Vec::new()
    };
    let kept = cap_neighbors(n, &contextual, &surrounding, config.quota());
    let features = proposals.features();
    let neighbors = par::map_range(n, |i| {
        kept[i]
            .iter()
            .map(|&(j, kind)| Neighbor {
                node: j,
                weight: adjacency_weight(features.row(i), features.row(j)),
                kind,
            })
            .collect()
    });
    ProposalGraph::from_neighbors(neighbors)
}

/// Orders candidates for comparison against a reference enumeration.
pub fn sort_candidates(c: &mut [EdgeCandidate]) {
    c.sort_by(|a, b| match a.node.cmp(&b.node) {
        Ordering::Equal => a.neighbor.cmp(&b.neighbor),
        o => o,
    });
}
