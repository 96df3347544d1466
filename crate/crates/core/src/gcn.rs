//! Graph-convolution layers with an analytic backward pass.
//!
//! Every layer computes `X_k = ReLU(P · drop(X_{k-1}) · W_k)` where the
//! propagation operator `P` adds each node's own row to a weighted sum of its
//! neighbors' rows:
//!
//! * training (sampled): `P_i = x_i + (1/N_s) Σ_{j ∈ sample(i)} A_ij x_j`,
//!   with `N_s` draws taken uniformly with replacement from the capped
//!   neighbor list;
//! * evaluation (full): `P_i = x_i + (1/|N(i)|) Σ_{j ∈ N(i)} A_ij x_j`,
//!   evaluated as a dense `Â X W` product.
//!
//! Training only materializes the receptive field of the batch: the nodes of
//! layer `k-1` are the nodes of layer `k` plus their sampled neighbors.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::graph::{Neighbor, ProposalGraph};
use crate::par;

/// How proposal relations enter the feature stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    /// Graph convolution over the proposal graph.
    Gcn,
    /// Per-proposal two-layer perceptron; the adjacency is ignored.
    Mlp,
    /// Perceptron followed by an unweighted mean over each node and its neighbors.
    MeanPool,
}

impl AggregationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationMode::Gcn => "gcn",
            AggregationMode::Mlp => "mlp",
            AggregationMode::MeanPool => "mean-pool",
        }
    }

    pub fn code(&self) -> u32 {
        match self {
            AggregationMode::Gcn => 0,
            AggregationMode::Mlp => 1,
            AggregationMode::MeanPool => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AggregationMode::Gcn),
            1 => Some(AggregationMode::Mlp),
            2 => Some(AggregationMode::MeanPool),
            _ => None,
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(AggregationMode::Gcn),
            "mlp" => Ok(AggregationMode::Mlp),
            "mean-pool" | "meanpool" | "mean_pool" => Ok(AggregationMode::MeanPool),
            other => Err(Error::Config(format!("unknown aggregation mode '{other}'"))),
        }
    }
}

/// Neighbor selection in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `N_s` uniform draws with replacement per node per layer.
    Uniform(usize),
    /// The whole capped neighbor list, normalized by its length.
    Full,
}

pub enum ForwardMode<'a> {
    Eval,
    Train {
        sampling: Sampling,
        rng: &'a mut dyn RngCore,
    },
}

impl ForwardMode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, ForwardMode::Train { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    /// `layers[k]` has shape `(d_k, d_{k+1})`.
    pub layers: Vec<Array2<f64>>,
    pub dropout: f64,
    pub concat_input: bool,
    pub mode: AggregationMode,
}

impl GcnStack {
    /// Uniform initialization in `±sqrt(6 / (d_in + d_out))`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        dropout: f64,
        mode: AggregationMode,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("a stack needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| glorot_uniform(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            dropout,
            concat_input: true,
            mode,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim() + if self.concat_input { self.input_dim() } else { 0 }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

pub fn glorot_uniform<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-bound..bound))
}

/// Row-chunked matrix product. Chunking is fixed-size, so the result does not
/// depend on the number of worker threads.
pub fn matmul(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    const CHUNK: usize = 64;
    if a.nrows() <= CHUNK {
        return a.dot(b);
    }
    let chunks = a.nrows().div_ceil(CHUNK);
    let parts = par::map_range(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(a.nrows());
        a.slice(s![lo..hi, ..]).dot(b)
    });
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("chunks share column count")
}

/// Dense graph convolution `A · X · W`.
pub fn gcn_layer_forward(
    adjacency: &ArrayView2<'_, f64>,
    x: &ArrayView2<'_, f64>,
    weight: &ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if adjacency.nrows() != adjacency.ncols() {
        return Err(Error::DimensionMismatch {
            context: "adjacency must be square",
            expected: adjacency.nrows(),
            actual: adjacency.ncols(),
        });
    }
    if adjacency.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "adjacency columns vs feature rows",
            expected: adjacency.ncols(),
            actual: x.nrows(),
        });
    }
    if x.ncols() != weight.nrows() {
        return Err(Error::DimensionMismatch {
            context: "feature width vs weight rows",
            expected: x.ncols(),
            actual: weight.nrows(),
        });
    }
    let ax = matmul(adjacency, x);
    Ok(matmul(&ax.view(), weight))
}

/// One node of the sampled convolution:
/// `((1/n_s) Σ_{j ∈ sample} A_ij x_j + x_i) · W`. An empty sample leaves `x_i · W`.
pub fn sampled_aggregate(
    x: &ArrayView2<'_, f64>,
    node: usize,
    sample: &[Neighbor],
    n_s: usize,
    weight: &ArrayView2<'_, f64>,
) -> Array1<f64> {
    let mut acc = x.row(node).to_owned();
    if !sample.is_empty() {
        let scale = 1.0 / n_s.max(1) as f64;
        for nb in sample {
            acc.scaled_add(scale * nb.weight, &x.row(nb.node));
        }
    }
    acc.dot(weight)
}

/// Uniform draws with replacement from `node`'s neighbor list.
pub fn sample_neighbors<R: RngCore + ?Sized>(
    graph: &ProposalGraph,
    node: usize,
    n_s: usize,
    rng: &mut R,
) -> Vec<Neighbor> {
    let list = graph.neighbors(node);
    if list.is_empty() {
        return Vec::new();
    }
    (0..n_s)
        .map(|_| list[rng.random_range(0..list.len())])
        .collect()
}

/// The dense full-neighborhood operator `I + D⁻¹A` restricted to capped neighbors.
pub fn propagation_matrix(graph: &ProposalGraph) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut m = Array2::eye(n);
    for i in 0..n {
        let list = graph.neighbors(i);
        if list.is_empty() {
            continue;
        }
        let scale = 1.0 / list.len() as f64;
        for nb in list {
            m[[i, nb.node]] += scale * nb.weight;
        }
    }
    m
}

#[derive(Debug, Clone)]
struct PlanRow {
    own: usize,
    own_coef: f64,
    terms: Vec<(usize, f64)>,
}

/// A propagation operator from one node set's rows to another's.
#[derive(Debug, Clone)]
enum Propagation {
    Sparse(Vec<PlanRow>),
    Dense(Array2<f64>),
}

impl Propagation {
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Propagation::Dense(m) => matmul(&m.view(), &x.view()),
            Propagation::Sparse(rows) => {
                let d = x.ncols();
                let data = par::map_slice(rows, |row| {
                    let mut acc = &x.row(row.own) * row.own_coef;
                    for &(j, c) in &row.terms {
                        acc.scaled_add(c, &x.row(j));
                    }
                    acc
                });
                let mut out = Array2::zeros((rows.len(), d));
                for (mut dst, src) in out.outer_iter_mut().zip(data) {
                    dst.assign(&src);
                }
                out
            }
        }
    }

    /// `Pᵀ · g` with `inputs` rows in the result.
    fn apply_transpose(&self, g: &Array2<f64>, inputs: usize) -> Array2<f64> {
        match self {
            Propagation::Dense(m) => matmul(&m.t(), &g.view()),
            Propagation::Sparse(rows) => {
                let mut out = Array2::zeros((inputs, g.ncols()));
                for (r, row) in rows.iter().enumerate() {
                    let gr = g.row(r);
                    out.row_mut(row.own).scaled_add(row.own_coef, &gr);
                    for &(j, c) in &row.terms {
                        out.row_mut(j).scaled_add(c, &gr);
                    }
                }
                out
            }
        }
    }
}

/// Ordered node set with a global-id → row lookup.
struct NodeSet {
    ids: Vec<usize>,
    slot: Vec<usize>,
}

impl NodeSet {
    fn new(num_nodes: usize, seed: &[usize]) -> Self {
        let mut set = Self {
            ids: Vec::with_capacity(seed.len()),
            slot: vec![usize::MAX; num_nodes],
        };
        for &i in seed {
            set.insert(i);
        }
        set
    }

    fn insert(&mut self, node: usize) -> usize {
        if self.slot[node] == usize::MAX {
            self.slot[node] = self.ids.len();
            self.ids.push(node);
        }
        self.slot[node]
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    /// `rows[k]` lists the global ids of the rows of `X_k`.
    rows: Vec<Vec<usize>>,
    props: Vec<Propagation>,
    masks: Vec<Option<Array2<f64>>>,
    aggregated: Vec<Array2<f64>>,
    pre_activation: Vec<Array2<f64>>,
    pool: Option<Propagation>,
    /// Row of each target within the top layer when there is no pooling step.
    target_rows: Vec<usize>,
    num_targets: usize,
}

impl StackCache {
    /// Number of distinct nodes whose input features entered the forward pass.
    pub fn receptive_field(&self) -> usize {
        self.rows[0].len()
    }
}

fn check_targets(graph: &ProposalGraph, x0: &Array2<f64>, stack: &GcnStack, targets: &[usize]) -> Result<()> {
    if x0.nrows() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "feature rows vs graph nodes",
            expected: graph.num_nodes(),
            actual: x0.nrows(),
        });
    }
    if x0.ncols() != stack.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "feature width vs first layer",
            expected: stack.input_dim(),
            actual: x0.ncols(),
        });
    }
    for w in stack.layers.windows(2) {
        if w[0].ncols() != w[1].nrows() {
            return Err(Error::DimensionMismatch {
                context: "consecutive layer widths",
                expected: w[0].ncols(),
                actual: w[1].nrows(),
            });
        }
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= graph.num_nodes()) {
        return Err(Error::Config(format!("target node {bad} out of range")));
    }
    Ok(())
}

fn mean_pool_rows(graph: &ProposalGraph, outputs: &[usize], inputs: &mut NodeSet) -> Vec<PlanRow> {
    outputs
        .iter()
        .map(|&i| {
            let list = graph.neighbors(i);
            let c = 1.0 / (list.len() + 1) as f64;
            PlanRow {
                own: inputs.insert(i),
                own_coef: c,
                terms: list.iter().map(|nb| (inputs.insert(nb.node), c)).collect(),
            }
        })
        .collect()
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

fn gather_rows(x: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    x.select(Axis(0), ids)
}

/// Runs the stack for `targets`, returning a `|targets| × output_dim` matrix
/// whose rows follow `targets` order. Targets must be distinct.
pub fn stack_forward(
    graph: &ProposalGraph,
    x0: &Array2<f64>,
    stack: &GcnStack,
    targets: &[usize],
    mode: &mut ForwardMode<'_>,
) -> Result<(Array2<f64>, StackCache)> {
    check_targets(graph, x0, stack, targets)?;
    let n = graph.num_nodes();
    let depth = stack.num_layers();

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
    let mut props: Vec<Option<Propagation>> = vec![None; depth];
    let mut pool = None;

    match mode {
        ForwardMode::Eval => {
            let all: Vec<usize> = (0..n).collect();
            for r in rows.iter_mut() {
                r.clone_from(&all);
            }
            for p in props.iter_mut() {
                *p = Some(match stack.mode {
                    AggregationMode::Gcn => Propagation::Dense(propagation_matrix(graph)),
                    _ => Propagation::Sparse(identity_rows(n)),
                });
            }
            if stack.mode == AggregationMode::MeanPool {
                let mut inputs = NodeSet::new(n, &all);
                pool = Some(Propagation::Sparse(mean_pool_rows(graph, targets, &mut inputs)));
            }
        }
        ForwardMode::Train { sampling, rng } => {
            let mut top = targets.to_vec();
            if stack.mode == AggregationMode::MeanPool {
                let mut inputs = NodeSet::new(n, targets);
                pool = Some(Propagation::Sparse(mean_pool_rows(graph, targets, &mut inputs)));
                top = inputs.ids;
            }
            rows[depth] = top;
            for k in (0..depth).rev() {
                let outputs = std::mem::take(&mut rows[k + 1]);
                let mut inputs = NodeSet::new(n, &outputs);
                let plan: Vec<PlanRow> = outputs
                    .iter()
                    .map(|&i| {
                        let own = inputs.insert(i);
                        let (sample, denom) = match stack.mode {
                            AggregationMode::Gcn => match *sampling {
                                Sampling::Uniform(n_s) => {
                                    (sample_neighbors(graph, i, n_s, &mut **rng), n_s.max(1))
                                }
                                Sampling::Full => {
                                    let list = graph.neighbors(i).to_vec();
                                    let d = list.len().max(1);
                                    (list, d)
                                }
                            },
                            _ => (Vec::new(), 1),
                        };
                        let scale = 1.0 / denom as f64;
                        PlanRow {
                            own,
                            own_coef: 1.0,
                            terms: sample
                                .iter()
                                .map(|nb| (inputs.insert(nb.node), scale * nb.weight))
                                .collect(),
                        }
                    })
                    .collect();
                rows[k + 1] = outputs;
                rows[k] = inputs.ids;
                props[k] = Some(Propagation::Sparse(plan));
            }
        }
    }
    let props: Vec<Propagation> = props.into_iter().map(|p| p.expect("planned")).collect();

    let mut masks = Vec::with_capacity(depth);
    let mut aggregated = Vec::with_capacity(depth);
    let mut pre_activation = Vec::with_capacity(depth);
    let mut h = gather_rows(x0, &rows[0]);
    for k in 0..depth {
        let mask = match mode {
            ForwardMode::Train { rng, .. } if stack.dropout > 0.0 => {
                Some(dropout_mask(h.nrows(), h.ncols(), stack.dropout, &mut **rng))
            }
            _ => None,
        };
        let input = match &mask {
            Some(m) => &h * m,
            None => h,
        };
        let z = props[k].apply(&input);
        let y = matmul(&z.view(), &stack.layers[k].view());
        h = y.mapv(|v| v.max(0.0));
        masks.push(mask);
        aggregated.push(z);
        pre_activation.push(y);
    }

    let mut target_rows = Vec::new();
    let hidden = match &pool {
        Some(p) => p.apply(&h),
        None => {
            let lookup = NodeSet::new(n, &rows[depth]);
            target_rows = targets.iter().map(|&t| lookup.slot[t]).collect();
            if rows[depth].as_slice() == targets {
                h
            } else {
                h.select(Axis(0), &target_rows)
            }
        }
    };
    let out = if stack.concat_input {
        let input_rows = gather_rows(x0, targets);
        concatenate(Axis(1), &[hidden.view(), input_rows.view()]).expect("row counts agree")
    } else {
        hidden
    };

    let cache = StackCache {
        rows,
        props,
        masks,
        aggregated,
        pre_activation,
        pool,
        target_rows,
        num_targets: targets.len(),
    };
    Ok((out, cache))
}

fn identity_rows(n: usize) -> Vec<PlanRow> {
    (0..n)
        .map(|i| PlanRow {
            own: i,
            own_coef: 1.0,
            terms: Vec::new(),
        })
        .collect()
}

/// Gradients of a scalar loss with respect to every layer weight, given the
/// gradient with respect to the stack output. The concatenated input half of
/// the output carries no parameters and is ignored.
pub fn stack_backward(
    stack: &GcnStack,
    cache: &StackCache,
    d_out: &ArrayView2<'_, f64>,
) -> Result<Vec<Array2<f64>>> {
    let depth = stack.num_layers();
    if cache.pre_activation.len() != depth {
        return Err(Error::Missing("forward cache does not match the stack".into()));
    }
    if d_out.nrows() != cache.num_targets || d_out.ncols() != stack.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "output gradient shape",
            expected: cache.num_targets * stack.output_dim(),
            actual: d_out.nrows() * d_out.ncols(),
        });
    }
    let hidden = stack.hidden_dim();
    let d_hidden = d_out.slice(s![.., ..hidden]).to_owned();
    let top_rows = cache.rows[depth].len();
    let mut d_h = match &cache.pool {
        Some(p) => p.apply_transpose(&d_hidden, top_rows),
        None if top_rows == cache.num_targets => d_hidden,
        None => {
            let mut scattered = Array2::zeros((top_rows, hidden));
            for (r, &row) in cache.target_rows.iter().enumerate() {
                scattered.row_mut(row).scaled_add(1.0, &d_hidden.row(r));
            }
            scattered
        }
    };

    let mut grads = vec![Array2::zeros((0, 0)); depth];
    for k in (0..depth).rev() {
        let y = &cache.pre_activation[k];
        let d_y = ndarray::Zip::from(&d_h)
            .and(y)
            .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
        grads[k] = matmul(&cache.aggregated[k].t(), &d_y.view());
        if k == 0 {
            break;
        }
        let d_z = matmul(&d_y.view(), &stack.layers[k].t());
        let d_in = cache.props[k].apply_transpose(&d_z, cache.rows[k].len());
        d_h = match &cache.masks[k] {
            Some(m) => d_in * m,
            None => d_in,
        };
    }
    Ok(grads)
}

/// Plain gradient descent `W ← W − lr·∇W`.
pub fn sgd_step<P, G>(params: &mut [P], grads: &[G], learning_rate: f64) -> Result<()>
where
    P: std::borrow::BorrowMut<Array2<f64>>,
    G: std::borrow::Borrow<Array2<f64>>,
{
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            context: "parameter vs gradient count",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        let (p, g) = (p.borrow(), g.borrow());
        if p.dim() != g.dim() {
            return Err(Error::DimensionMismatch {
                context: "parameter vs gradient shape",
                expected: p.len(),
                actual: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.borrow_mut().scaled_add(-learning_rate, g.borrow());
    }
    Ok(())
}
