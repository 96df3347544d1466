//! The two-branch model: an action stack over original proposal features and
//! a location stack over extended features, sharing one proposal graph.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gcn::{stack_backward, stack_forward, AggregationMode, ForwardMode, GcnStack, StackCache};
use crate::graph::ProposalGraph;
use crate::heads::{head_backward, head_forward, HeadOutputs, HeadParams};
use crate::loss::LossGradients;
use crate::proposal::ProposalSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Width `d` of the original proposal feature; extended features are `3d`.
    pub feature_dim: usize,
    pub num_layers: usize,
    /// Hidden width of every layer. `None` keeps each stack at its input width.
    pub hidden_dim: Option<usize>,
    pub dropout: f64,
    pub mode: AggregationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            feature_dim: 1024,
            num_layers: 2,
            hidden_dim: None,
            dropout: 0.8,
            mode: AggregationMode::Gcn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgcnModel {
    pub action_stack: GcnStack,
    pub location_stack: GcnStack,
    pub heads: HeadParams,
}

/// Gradients shaped like [`PgcnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub action_stack: Vec<Array2<f64>>,
    pub location_stack: Vec<Array2<f64>>,
    pub heads: HeadParams,
}

impl ModelGradients {
    /// Tensors in the same order as [`PgcnModel::tensors`].
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.action_stack
            .iter()
            .chain(&self.location_stack)
            .chain(self.heads.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.action_stack
            .iter_mut()
            .chain(self.location_stack.iter_mut())
            .chain(self.heads.tensors_mut())
            .collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Activations from [`PgcnModel::forward`].
pub struct ForwardCache {
    action: StackCache,
    location: StackCache,
    action_features: Array2<f64>,
    location_features: Array2<f64>,
}

impl ForwardCache {
    pub fn receptive_field(&self) -> (usize, usize) {
        (self.action.receptive_field(), self.location.receptive_field())
    }
}

impl PgcnModel {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        if config.num_classes == 0 || config.feature_dim == 0 || config.num_layers == 0 {
            return Err(Error::Config(
                "num_classes, feature_dim and num_layers must be positive".into(),
            ));
        }
        let dims = |input: usize| {
            let hidden = config.hidden_dim.unwrap_or(input);
            std::iter::once(input)
                .chain(std::iter::repeat_n(hidden, config.num_layers))
                .collect::<Vec<_>>()
        };
        let action_stack = GcnStack::init(&dims(config.feature_dim), config.dropout, config.mode, rng)?;
        let location_stack =
            GcnStack::init(&dims(3 * config.feature_dim), config.dropout, config.mode, rng)?;
        let heads = HeadParams::init(
            action_stack.output_dim(),
            location_stack.output_dim(),
            config.num_classes,
            rng,
        );
        Ok(Self {
            action_stack,
            location_stack,
            heads,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.heads.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.action_stack.input_dim()
    }

    pub fn mode(&self) -> AggregationMode {
        self.action_stack.mode
    }

    pub fn set_mode(&mut self, mode: AggregationMode) {
        self.action_stack.mode = mode;
        self.location_stack.mode = mode;
    }

    pub fn set_dropout(&mut self, dropout: f64) {
        self.action_stack.dropout = dropout;
        self.location_stack.dropout = dropout;
    }

    /// Action stack layers, location stack layers, then the six head tensors.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.action_stack
            .layers
            .iter()
            .chain(&self.location_stack.layers)
            .chain(self.heads.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.action_stack
            .layers
            .iter_mut()
            .chain(self.location_stack.layers.iter_mut())
            .chain(self.heads.tensors_mut())
            .collect()
    }

    /// Names matching [`tensors`](Self::tensors), used by checkpoints.
    pub fn tensor_names(&self) -> Vec<String> {
        let stack = |prefix: &'static str, n: usize| (0..n).map(move |k| format!("{prefix}.layer{k}"));
        stack("action", self.action_stack.num_layers())
            .chain(stack("location", self.location_stack.num_layers()))
            .chain(
                [
                    "head.action.weight",
                    "head.action.bias",
                    "head.completeness.weight",
                    "head.completeness.bias",
                    "head.regression.weight",
                    "head.regression.bias",
                ]
                .map(String::from),
            )
            .collect()
    }

    pub fn zero_gradients(&self) -> ModelGradients {
        let zeros = |s: &GcnStack| s.layers.iter().map(|l| Array2::zeros(l.dim())).collect();
        ModelGradients {
            action_stack: zeros(&self.action_stack),
            location_stack: zeros(&self.location_stack),
            heads: HeadParams::zeros(
                self.action_stack.output_dim(),
                self.location_stack.output_dim(),
                self.num_classes(),
            ),
        }
    }

    fn check_input(&self, graph: &ProposalGraph, proposals: &ProposalSet) -> Result<()> {
        if proposals.feature_dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "proposal feature width vs model",
                expected: self.feature_dim(),
                actual: proposals.feature_dim(),
            });
        }
        if graph.num_nodes() != proposals.len() {
            return Err(Error::DimensionMismatch {
                context: "graph nodes vs proposals",
                expected: proposals.len(),
                actual: graph.num_nodes(),
            });
        }
        Ok(())
    }

    /// Head outputs for the distinct proposal ids in `targets`, in that order.
    pub fn forward(
        &self,
        graph: &ProposalGraph,
        proposals: &ProposalSet,
        targets: &[usize],
        mode: &mut ForwardMode<'_>,
    ) -> Result<(HeadOutputs, ForwardCache)> {
        self.check_input(graph, proposals)?;
        let (action_features, action) =
            stack_forward(graph, proposals.features(), &self.action_stack, targets, mode)?;
        let (location_features, location) = stack_forward(
            graph,
            proposals.extended_features(),
            &self.location_stack,
            targets,
            mode,
        )?;
        let outputs = head_forward(&self.heads, &action_features, &location_features);
        Ok((
            outputs,
            ForwardCache {
                action,
                location,
                action_features,
                location_features,
            },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache, grads: &LossGradients) -> Result<ModelGradients> {
        let heads = head_backward(
            &self.heads,
            &cache.action_features,
            &cache.location_features,
            &grads.d_logits,
            &grads.d_completeness,
            &grads.d_regression,
        );
        let action_stack = stack_backward(&self.action_stack, &cache.action, &heads.d_action_in.view())?;
        let location_stack =
            stack_backward(&self.location_stack, &cache.location, &heads.d_location_in.view())?;
        Ok(ModelGradients {
            action_stack,
            location_stack,
            heads: heads.params,
        })
    }

    /// Full-graph evaluation of every proposal, no sampling and no dropout.
    pub fn infer(&self, graph: &ProposalGraph, proposals: &ProposalSet) -> Result<HeadOutputs> {
        let all: Vec<usize> = (0..proposals.len()).collect();
        Ok(self.forward(graph, proposals, &all, &mut ForwardMode::Eval)?.0)
    }
}
