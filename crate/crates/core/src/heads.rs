//! Prediction heads on top of the two feature stacks.
//!
//! The action head reads the first stack and has `C + 1` outputs (class 0 is
//! background). The completeness (`C` outputs) and regression (`2C` outputs,
//! one `(center, length)` pair per class) heads read the second stack.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::gcn::{glorot_uniform, matmul};
use crate::interval::Offset;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub action_weight: Array2<f64>,
    /// Shape `(1, C + 1)`.
    pub action_bias: Array2<f64>,
    pub completeness_weight: Array2<f64>,
    pub completeness_bias: Array2<f64>,
    pub regression_weight: Array2<f64>,
    pub regression_bias: Array2<f64>,
}

/// Shrinks the regression layer's initial weights relative to the other heads.
pub const REGRESSION_INIT_SCALE: f64 = 0.01;

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(
        action_in: usize,
        location_in: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            action_weight: glorot_uniform(action_in, num_classes + 1, rng),
            action_bias: Array2::zeros((1, num_classes + 1)),
            completeness_weight: glorot_uniform(location_in, num_classes, rng),
            completeness_bias: Array2::zeros((1, num_classes)),
            // offsets start near zero so untrained slots leave boundaries alone
            regression_weight: glorot_uniform(location_in, 2 * num_classes, rng) * REGRESSION_INIT_SCALE,
            regression_bias: Array2::zeros((1, 2 * num_classes)),
        }
    }

    pub fn zeros(action_in: usize, location_in: usize, num_classes: usize) -> Self {
        Self {
            action_weight: Array2::zeros((action_in, num_classes + 1)),
            action_bias: Array2::zeros((1, num_classes + 1)),
            completeness_weight: Array2::zeros((location_in, num_classes)),
            completeness_bias: Array2::zeros((1, num_classes)),
            regression_weight: Array2::zeros((location_in, 2 * num_classes)),
            regression_bias: Array2::zeros((1, 2 * num_classes)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.completeness_bias.ncols()
    }

    pub fn tensors(&self) -> [&Array2<f64>; 6] {
        [
            &self.action_weight,
            &self.action_bias,
            &self.completeness_weight,
            &self.completeness_bias,
            &self.regression_weight,
            &self.regression_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 6] {
        [
            &mut self.action_weight,
            &mut self.action_bias,
            &mut self.completeness_weight,
            &mut self.completeness_bias,
            &mut self.regression_weight,
            &mut self.regression_bias,
        ]
    }
}

/// Head outputs for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub completeness: Array2<f64>,
    pub regression: Array2<f64>,
}

impl HeadOutputs {
    /// The `(center, length)` offset predicted for `row` under class `class` (≥ 1).
    pub fn offset(&self, row: usize, class: usize) -> Offset {
        Offset {
            center: self.regression[[row, 2 * (class - 1)]],
            length: self.regression[[row, 2 * (class - 1) + 1]],
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    matmul(&x.view(), &w.view()) + b
}

fn affine_row(x: ArrayView1<'_, f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    x.dot(w) + b.row(0)
}

/// Class probabilities over background plus `C` action classes.
pub fn classify_actions(params: &HeadParams, row: ArrayView1<'_, f64>) -> Array1<f64> {
    let logits = affine_row(row, &params.action_weight, &params.action_bias).insert_axis(Axis(0));
    softmax_rows(&logits).index_axis_move(Axis(0), 0)
}

/// Per-class boundary offsets, class 1 first.
pub fn regress_boundaries(params: &HeadParams, row: ArrayView1<'_, f64>) -> Vec<Offset> {
    let raw = affine_row(row, &params.regression_weight, &params.regression_bias);
    raw.as_slice()
        .expect("contiguous")
        .chunks_exact(2)
        .map(|p| Offset {
            center: p[0],
            length: p[1],
        })
        .collect()
}

/// Unbounded per-class completeness scores, class 1 first.
pub fn score_completeness(params: &HeadParams, row: ArrayView1<'_, f64>) -> Array1<f64> {
    affine_row(row, &params.completeness_weight, &params.completeness_bias)
}

pub fn head_forward(params: &HeadParams, action_in: &Array2<f64>, location_in: &Array2<f64>) -> HeadOutputs {
    let logits = affine(action_in, &params.action_weight, &params.action_bias);
    let probs = softmax_rows(&logits);
    HeadOutputs {
        logits,
        probs,
        completeness: affine(location_in, &params.completeness_weight, &params.completeness_bias),
        regression: affine(location_in, &params.regression_weight, &params.regression_bias),
    }
}

/// Parameter gradients plus gradients with respect to both head inputs.
pub struct HeadBackward {
    pub params: HeadParams,
    pub d_action_in: Array2<f64>,
    pub d_location_in: Array2<f64>,
}

pub fn head_backward(
    params: &HeadParams,
    action_in: &Array2<f64>,
    location_in: &Array2<f64>,
    d_logits: &Array2<f64>,
    d_completeness: &Array2<f64>,
    d_regression: &Array2<f64>,
) -> HeadBackward {
    let col_sum = |g: &Array2<f64>| g.sum_axis(Axis(0)).insert_axis(Axis(0));
    let grads = HeadParams {
        action_weight: matmul(&action_in.t(), &d_logits.view()),
        action_bias: col_sum(d_logits),
        completeness_weight: matmul(&location_in.t(), &d_completeness.view()),
        completeness_bias: col_sum(d_completeness),
        regression_weight: matmul(&location_in.t(), &d_regression.view()),
        regression_bias: col_sum(d_regression),
    };
    let d_action_in = matmul(&d_logits.view(), &params.action_weight.t());
    let d_location_in = matmul(&d_completeness.view(), &params.completeness_weight.t())
        + matmul(&d_regression.view(), &params.regression_weight.t());
    HeadBackward {
        params: grads,
        d_action_in,
        d_location_in,
    }
}
