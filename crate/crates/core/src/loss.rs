//! Multi-task loss: cross-entropy over all samples, smooth-L1 boundary
//! regression on foreground samples, and a completeness hinge on every
//! non-background sample. Regression and completeness read the slot of the
//! sample's target class.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::heads::HeadOutputs;
use crate::labels::{SampleKind, TrainingSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_reg: f64,
    pub lambda_com: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 0.5,
            lambda_com: 0.5,
        }
    }
}

/// `0.5 x²` inside the unit ball, `|x| − 0.5` outside.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `max(0, 1 − e·ĉ)` with `e ∈ {−1, +1}`.
pub fn hinge_completeness(target: f64, score: f64) -> f64 {
    (1.0 - target * score).max(0.0)
}

pub fn hinge_grad(target: f64, score: f64) -> f64 {
    if 1.0 - target * score > 0.0 {
        -target
    } else {
        0.0
    }
}

/// Summed loss terms over a batch. `total = ce + λ1·reg + λ2·com`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub regression: f64,
    pub completeness: f64,
}

/// Gradient of the total loss with respect to each head output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub d_logits: Array2<f64>,
    pub d_completeness: Array2<f64>,
    pub d_regression: Array2<f64>,
}

/// Evaluates the loss over `samples`, where `rows[i]` is the output row that
/// holds the predictions for `samples[i]`. Rows may repeat.
pub fn multitask_loss(
    outputs: &HeadOutputs,
    samples: &[TrainingSample],
    rows: &[usize],
    config: &LossConfig,
) -> Result<(LossBreakdown, LossGradients)> {
    if samples.is_empty() {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    if samples.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            context: "samples vs output rows",
            expected: samples.len(),
            actual: rows.len(),
        });
    }
    let num_classes = outputs.completeness.ncols();
    let mut grads = LossGradients {
        d_logits: Array2::zeros(outputs.logits.dim()),
        d_completeness: Array2::zeros(outputs.completeness.dim()),
        d_regression: Array2::zeros(outputs.regression.dim()),
    };
    let mut b = LossBreakdown::default();

    for (s, &r) in samples.iter().zip(rows) {
        let y = s.class_target;
        if y > num_classes {
            return Err(Error::Config(format!(
                "class target {y} exceeds {num_classes} classes"
            )));
        }
        let logits = outputs.logits.row(r);
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        b.cross_entropy += lse - logits[y];
        let mut dl = grads.d_logits.row_mut(r);
        dl += &outputs.probs.row(r);
        dl[y] -= 1.0;

        if y == 0 {
            continue;
        }
        let slot = y - 1;
        if s.kind == SampleKind::Foreground {
            let target = s.regression_target.ok_or_else(|| {
                Error::Missing(format!("foreground sample {} has no regression target", s.proposal))
            })?;
            for (k, t) in [target.center, target.length].into_iter().enumerate() {
                let col = 2 * slot + k;
                let diff = outputs.regression[[r, col]] - t;
                b.regression += smooth_l1(diff);
                grads.d_regression[[r, col]] += config.lambda_reg * smooth_l1_grad(diff);
            }
        }
        let c = outputs.completeness[[r, slot]];
        b.completeness += hinge_completeness(s.completeness_target, c);
        grads.d_completeness[[r, slot]] += config.lambda_com * hinge_grad(s.completeness_target, c);
    }
    b.total = b.cross_entropy + config.lambda_reg * b.regression + config.lambda_com * b.completeness;
    Ok((b, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::softmax_rows;
    use crate::interval::Offset;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn outputs(logits: Array2<f64>, completeness: Array2<f64>, regression: Array2<f64>) -> HeadOutputs {
        HeadOutputs {
            probs: softmax_rows(&logits),
            logits,
            completeness,
            regression,
        }
    }

    fn fg(class: usize, o: Offset) -> TrainingSample {
        TrainingSample {
            proposal: 0,
            kind: SampleKind::Foreground,
            class_target: class,
            completeness_target: 1.0,
            regression_target: Some(o),
        }
    }

    fn inc(class: usize) -> TrainingSample {
        TrainingSample {
            proposal: 1,
            kind: SampleKind::Incomplete,
            class_target: class,
            completeness_target: -1.0,
            regression_target: None,
        }
    }

    fn bg() -> TrainingSample {
        TrainingSample {
            proposal: 2,
            kind: SampleKind::Background,
            class_target: 0,
            completeness_target: -1.0,
            regression_target: None,
        }
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1(1.0 - 1e-12).min(0.5), smooth_l1(1.0 - 1e-12));
        assert_abs_diff_eq!(smooth_l1(1.0 - 1e-9), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_completeness(1.0, 5.0), 0.0);
        assert_eq!(hinge_completeness(1.0, 1.0), 0.0);
        assert_eq!(hinge_completeness(1.0, 0.0), 1.0);
        assert_eq!(hinge_completeness(-1.0, 0.5), 1.5);
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let o = Offset { center: 0.1, length: -0.2 };
        let out = outputs(
            array![[-60.0, 60.0, -60.0], [-60.0, -60.0, 60.0], [60.0, -60.0, -60.0]],
            array![[1.0, 0.0], [0.0, -1.0], [0.0, 0.0]],
            array![[0.1, -0.2, 9.0, 9.0], [5.0, 5.0, 5.0, 5.0], [0.0, 0.0, 0.0, 0.0]],
        );
        let (b, _) = multitask_loss(&out, &[fg(1, o), inc(2), bg()], &[0, 1, 2], &LossConfig::default()).unwrap();
        assert!(b.total < 1e-40, "{b:?}");
        assert_eq!(b.regression, 0.0);
        assert_eq!(b.completeness, 0.0);
    }

    #[test]
    fn background_only_is_pure_cross_entropy() {
        let out = outputs(
            array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]],
            array![[4.0, -3.0], [0.2, 0.1]],
            array![[1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0]],
        );
        let (b, g) = multitask_loss(&out, &[bg(), bg()], &[0, 1], &LossConfig::default()).unwrap();
        assert_eq!(b.total, b.cross_entropy);
        assert!(g.d_completeness.iter().all(|&v| v == 0.0));
        assert!(g.d_regression.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_sample_hand_fixture() {
        // logits zero => CE = ln 3 per sample
        let out = outputs(
            Array2::zeros((3, 3)),
            array![[0.5, 0.0], [0.0, 0.5], [7.0, 7.0]],
            array![[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]],
        );
        // fg: offset target (0.5, -2.0): smooth = 0.125 + 1.5; hinge(+1, 0.5) = 0.5
        // inc class 2: hinge(-1, 0.5) = 1.5
        let samples = [fg(1, Offset { center: 0.5, length: -2.0 }), inc(2), bg()];
        let (b, _) = multitask_loss(&out, &samples, &[0, 1, 2], &LossConfig::default()).unwrap();
        let ce = 3.0 * 3f64.ln();
        assert_abs_diff_eq!(b.cross_entropy, ce, epsilon = 1e-12);
        assert_abs_diff_eq!(b.regression, 1.625, epsilon = 1e-12);
        assert_abs_diff_eq!(b.completeness, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.total, ce + 0.5 * 1.625 + 0.5 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn regression_ignores_other_class_slots() {
        let base = outputs(Array2::zeros((1, 3)), Array2::zeros((1, 2)), array![[0.2, 0.1, 0.0, 0.0]]);
        let mut moved = base.clone();
        moved.regression[[0, 2]] = 42.0;
        moved.regression[[0, 3]] = -3.0;
        let s = [fg(1, Offset { center: 0.0, length: 0.0 })];
        let cfg = LossConfig::default();
        let (a, _) = multitask_loss(&base, &s, &[0], &cfg).unwrap();
        let (b, _) = multitask_loss(&moved, &s, &[0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = array![[0.3, -0.4, 1.1], [0.9, 0.2, -0.5], [0.0, 0.7, 0.1]];
        let comp = array![[0.3, -0.6], [0.25, 0.4], [-0.2, 0.8]];
        let reg = array![[0.4, -0.3, 1.7, 0.2], [0.1, 0.5, -0.6, 0.35], [0.0, 0.0, 0.0, 0.0]];
        let samples = [
            fg(1, Offset { center: 0.1, length: 0.2 }),
            fg(2, Offset { center: 0.0, length: 0.0 }),
            inc(1),
            bg(),
        ];
        let rows = [0, 1, 2, 1];
        let cfg = LossConfig::default();
        let eval = |l: &Array2<f64>, c: &Array2<f64>, r: &Array2<f64>| {
            multitask_loss(&outputs(l.clone(), c.clone(), r.clone()), &samples, &rows, &cfg)
                .unwrap()
                .0
                .total
        };
        let (_, g) = multitask_loss(&outputs(logits.clone(), comp.clone(), reg.clone()), &samples, &rows, &cfg).unwrap();
        let h = 1e-6;
        for idx in 0..logits.len() {
            let (r, c) = (idx / 3, idx % 3);
            let mut p = logits.clone();
            p[[r, c]] += h;
            let mut m = logits.clone();
            m[[r, c]] -= h;
            let fd = (eval(&p, &comp, &reg) - eval(&m, &comp, &reg)) / (2.0 * h);
            assert_abs_diff_eq!(fd, g.d_logits[[r, c]], epsilon = 1e-7);
        }
        for idx in 0..comp.len() {
            let (r, c) = (idx / 2, idx % 2);
            let mut p = comp.clone();
            p[[r, c]] += h;
            let mut m = comp.clone();
            m[[r, c]] -= h;
            let fd = (eval(&logits, &p, &reg) - eval(&logits, &m, &reg)) / (2.0 * h);
            assert_abs_diff_eq!(fd, g.d_completeness[[r, c]], epsilon = 1e-7);
        }
        for idx in 0..reg.len() {
            let (r, c) = (idx / 4, idx % 4);
            let mut p = reg.clone();
            p[[r, c]] += h;
            let mut m = reg.clone();
            m[[r, c]] -= h;
            let fd = (eval(&logits, &comp, &p) - eval(&logits, &comp, &m)) / (2.0 * h);
            assert_abs_diff_eq!(fd, g.d_regression[[r, c]], epsilon = 1e-7);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let out = outputs(Array2::zeros((1, 3)), Array2::zeros((1, 2)), Array2::zeros((1, 4)));
        assert!(multitask_loss(&out, &[], &[], &LossConfig::default()).is_err());
    }
}
