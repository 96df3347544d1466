//! Per-iteration training cost as a function of the neighbor sample size.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gcn::{AggregationMode, Sampling};
use crate::io::{generate_synthetic, PipelineConfig, Stream, SyntheticSpec};
use crate::network::PgcnModel;
use crate::pipeline::{num_classes, training_videos};
use crate::trainer::{train_epoch, TrainConfig, TrainState};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub proposals: usize,
    pub feature_dim: usize,
    pub sample_sizes: Vec<usize>,
    pub modes: Vec<AggregationMode>,
    /// Timed iterations per measurement.
    pub iterations: usize,
    /// Interleaved measurement rounds; the fastest round is reported.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            proposals: 1000,
            feature_dim: 64,
            sample_sizes: vec![1, 2, 3, 4, 5, 10],
            modes: vec![AggregationMode::Gcn, AggregationMode::Mlp],
            iterations: 5,
            rounds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub mode: AggregationMode,
    pub sample_size: usize,
    pub seconds_per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn seconds(&self, mode: AggregationMode) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.seconds_per_iteration)
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("mode\tN_s\tsec/iter\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{:.6}", r.mode.as_str(), r.sample_size, r.seconds_per_iteration);
        }
        s
    }
}

/// Times single-video training steps on one synthetic video with
/// `config.proposals` proposals.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    let spec = SyntheticSpec {
        videos: 1,
        classes: 5,
        proposals_per_video: config.proposals,
        feature_dim: config.feature_dim,
        seed: config.seed,
        segments_per_video: 1024,
        max_instances: 20,
        ..Default::default()
    };
    let records = generate_synthetic(&spec)?;
    let pipeline = PipelineConfig::default();
    let videos = training_videos(&records, Stream::Rgb, &pipeline)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = PgcnModel::init(&pipeline.model_config(num_classes(&records), config.feature_dim), &mut rng)?;

    let cells: Vec<(AggregationMode, usize)> = config
        .modes
        .iter()
        .flat_map(|&m| config.sample_sizes.iter().map(move |&n| (m, n)))
        .collect();
    let mut best = vec![f64::INFINITY; cells.len()];
    for _ in 0..config.rounds.max(1) {
        for (cell, &(mode, n_s)) in cells.iter().enumerate() {
            let train = TrainConfig {
                sampling: Sampling::Uniform(n_s),
                seed: config.seed,
                ..pipeline.train_config(Stream::Rgb)
            };
            let mut model = base.clone();
            model.set_mode(mode);
            let mut state = TrainState::from_model(model, &train, ChaCha8Rng::seed_from_u64(config.seed));
            // one untimed warm-up step
            train_epoch(&videos, &mut state, &train)?;
            let start = Instant::now();
            for _ in 0..config.iterations.max(1) {
                train_epoch(&videos, &mut state, &train)?;
            }
            let per_iter = start.elapsed().as_secs_f64() / config.iterations.max(1) as f64;
            best[cell] = best[cell].min(per_iter);
        }
    }
    Ok(BenchReport {
        rows: cells
            .into_iter()
            .zip(best)
            .map(|((mode, sample_size), s)| BenchRow {
                mode,
                sample_size,
                seconds_per_iteration: s,
            })
            .collect(),
    })
}
