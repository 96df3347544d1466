//! Per-video mini-batch training with scheduled gradient descent.
//!
//! One epoch visits every training video once, in a seeded random order, and
//! takes one optimization step per video. Each mini-batch mixes foreground,
//! incomplete, and background samples from that single video in a fixed
//! ratio.

mod checkpoint;

pub use checkpoint::{restore, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;

use log::warn;
use ndarray::Axis;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gcn::{sgd_step, ForwardMode, Sampling};
use crate::graph::{build_graph, GraphConfig, ProposalGraph};
use crate::interval::GroundTruthInstance;
use crate::labels::{label_samples, LabelThresholds, OverlapMode, SampleKind, TrainingSample};
use crate::loss::{multitask_loss, LossConfig};
use crate::network::{ModelConfig, ModelGradients, PgcnModel};
use crate::par;
use crate::proposal::ProposalSet;

/// Step decay: the rate is divided by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub every: usize,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(initial: f64) -> Self {
        Self {
            initial,
            every: 15,
            factor: 10.0,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.initial / self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

/// `lr_initial · 10^−⌊epoch / 15⌋`.
pub fn lr_schedule(epoch: usize, lr_initial: f64) -> f64 {
    LrSchedule::new(lr_initial).at(epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Foreground : incomplete : background.
    pub sample_ratio: (usize, usize, usize),
    pub schedule: LrSchedule,
    pub sampling: Sampling,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            sample_ratio: (1, 6, 1),
            schedule: LrSchedule::new(0.001),
            sampling: Sampling::Uniform(4),
            momentum: 0.0,
            clip_norm: None,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.sample_ratio;
        let parts = a + b + c;
        if parts == 0 || self.batch_size == 0 || !self.batch_size.is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "sample ratio {a}:{b}:{c} must divide batch size {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Sampling::Uniform(0) = self.sampling {
            return Err(Error::Config("sampling size must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-category sample counts `(fg, inc, bg)`.
    pub fn quotas(&self) -> (usize, usize, usize) {
        let (a, b, c) = self.sample_ratio;
        let unit = self.batch_size / (a + b + c);
        (a * unit, b * unit, c * unit)
    }
}

/// One video prepared for training: proposals, graph, and labeled samples.
#[derive(Debug, Clone)]
pub struct TrainingVideo {
    pub id: String,
    pub proposals: ProposalSet,
    pub graph: ProposalGraph,
    pub samples: Vec<TrainingSample>,
}

impl TrainingVideo {
    pub fn prepare(
        id: impl Into<String>,
        proposals: ProposalSet,
        ground_truths: &[GroundTruthInstance],
        graph: &GraphConfig,
        thresholds: &LabelThresholds,
        overlap: OverlapMode,
    ) -> Result<Self> {
        let graph = build_graph(&proposals, graph)?;
        let samples = label_samples(&proposals.intervals(), ground_truths, thresholds, overlap)?;
        Ok(Self {
            id: id.into(),
            proposals,
            graph,
            samples,
        })
    }
}

/// Draws a mini-batch in the configured ratio. Categories with fewer samples
/// than their quota are drawn with replacement; empty categories contribute
/// nothing. Returns `None` when the video has no labeled samples at all.
pub fn assemble_batch<R: Rng + ?Sized>(
    samples: &[TrainingSample],
    quotas: (usize, usize, usize),
    rng: &mut R,
) -> Option<Vec<TrainingSample>> {
    if samples.is_empty() {
        return None;
    }
    let pool = |kind| samples.iter().filter(|s| s.kind == kind).copied().collect::<Vec<_>>();
    let mut batch = Vec::with_capacity(quotas.0 + quotas.1 + quotas.2);
    for (kind, quota) in [
        (SampleKind::Foreground, quotas.0),
        (SampleKind::Incomplete, quotas.1),
        (SampleKind::Background, quotas.2),
    ] {
        let p = pool(kind);
        if p.is_empty() {
            continue;
        }
        if p.len() >= quota {
            batch.extend(index::sample(rng, p.len(), quota).into_iter().map(|i| p[i]));
        } else {
            batch.extend((0..quota).map(|_| p[rng.random_range(0..p.len())]));
        }
    }
    Some(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub cross_entropy: f64,
    pub regression: f64,
    pub completeness: f64,
    pub accuracy: f64,
}

impl fmt::Display for EpochMetrics {
    /// Tab-separated `epoch lr loss ce reg com acc`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}",
            self.epoch,
            self.lr,
            self.loss,
            self.cross_entropy,
            self.regression,
            self.completeness,
            self.accuracy
        )
    }
}

pub const LOG_HEADER: &str = "epoch\tlr\tloss\tce\treg\tcom\tacc";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub schedule: LrSchedule,
    pub model: PgcnModel,
    pub rng: ChaCha8Rng,
    pub velocity: Option<ModelGradients>,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let model = PgcnModel::init(model, &mut rng)?;
        Ok(Self::from_model(model, train, rng))
    }

    pub fn from_model(model: PgcnModel, train: &TrainConfig, rng: ChaCha8Rng) -> Self {
        Self {
            epoch: 0,
            schedule: train.schedule,
            model,
            rng,
            velocity: None,
            history: Vec::new(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.epoch)
    }
}

fn apply_update(state: &mut TrainState, mut grads: ModelGradients, lr: f64, config: &TrainConfig) -> Result<()> {
    if let Some(max) = config.clip_norm {
        let norm = grads.global_norm();
        if norm > max {
            let scale = max / norm;
            for t in grads.tensors_mut() {
                t.mapv_inplace(|v| v * scale);
            }
        }
    }
    let step = if config.momentum > 0.0 {
        let velocity = state.velocity.get_or_insert_with(|| state.model.zero_gradients());
        for (v, g) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
            v.mapv_inplace(|x| x * config.momentum);
            *v += g;
        }
        velocity.clone()
    } else {
        grads
    };
    sgd_step(&mut state.model.tensors_mut(), &step.tensors(), lr)
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// One pass over `videos`, one step per video. Returns the epoch's mean batch
/// loss terms and batch classification accuracy.
pub fn train_epoch(videos: &[TrainingVideo], state: &mut TrainState, config: &TrainConfig) -> Result<EpochMetrics> {
    config.validate()?;
    let lr = state.current_lr();
    let quotas = config.quotas();
    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(&mut state.rng);

    let mut m = EpochMetrics {
        epoch: state.epoch,
        lr,
        ..Default::default()
    };
    let (mut batches, mut seen, mut correct) = (0usize, 0usize, 0usize);
    for vi in order {
        let video = &videos[vi];
        let Some(batch) = assemble_batch(&video.samples, quotas, &mut state.rng) else {
            warn!("video {} has no labeled samples; skipped", video.id);
            continue;
        };
        let mut targets: Vec<usize> = batch.iter().map(|s| s.proposal).collect();
        targets.sort_unstable();
        targets.dedup();
        let rows: Vec<usize> = batch
            .iter()
            .map(|s| targets.binary_search(&s.proposal).expect("target present"))
            .collect();

        let mut mode = ForwardMode::Train {
            sampling: config.sampling,
            rng: &mut state.rng,
        };
        let (outputs, cache) = state.model.forward(&video.graph, &video.proposals, &targets, &mut mode)?;
        let (loss, grads) = multitask_loss(&outputs, &batch, &rows, &config.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at epoch {} on video {}: {loss:?}",
                state.epoch, video.id
            )));
        }
        let grads = state.model.backward(&cache, &grads)?;
        apply_update(state, grads, lr, config)?;

        batches += 1;
        m.loss += loss.total;
        m.cross_entropy += loss.cross_entropy;
        m.regression += loss.regression;
        m.completeness += loss.completeness;
        for (s, &r) in batch.iter().zip(&rows) {
            seen += 1;
            correct += usize::from(argmax(outputs.probs.row(r)) == s.class_target);
        }
    }
    if batches > 0 {
        let n = batches as f64;
        m.loss /= n;
        m.cross_entropy /= n;
        m.regression /= n;
        m.completeness /= n;
        m.accuracy = correct as f64 / seen as f64;
    }
    state.epoch += 1;
    state.history.push(m);
    Ok(m)
}

/// Runs epochs until `config.epochs` have completed, calling `on_epoch` after each.
pub fn train<F: FnMut(&EpochMetrics)>(
    videos: &[TrainingVideo],
    state: &mut TrainState,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<()> {
    while state.epoch < config.epochs {
        let m = train_epoch(videos, state, config)?;
        on_epoch(&m);
    }
    Ok(())
}

/// Eval-mode accuracy of the action head on samples of `kind` (all samples if `None`).
pub fn classification_accuracy(
    model: &PgcnModel,
    videos: &[TrainingVideo],
    kind: Option<SampleKind>,
) -> Result<f64> {
    let per_video = par::map_slice(videos, |v| -> Result<(usize, usize)> {
        let out = model.infer(&v.graph, &v.proposals)?;
        let mut hits = 0;
        let mut total = 0;
        for s in v.samples.iter().filter(|s| kind.is_none_or(|k| s.kind == k)) {
            total += 1;
            hits += usize::from(argmax(out.probs.index_axis(Axis(0), s.proposal)) == s.class_target);
        }
        Ok((hits, total))
    });
    let (mut hits, mut total) = (0, 0);
    for r in per_video {
        let (h, t) = r?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
