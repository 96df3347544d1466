//! Dataset-level glue: labeling and graph building for training, and
//! inference over whole splits.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::eval::{decode_detections, fuse_streams, infer_video, Detection, ExternalLabels, VideoPredictions};
use crate::graph::build_graph;
use crate::io::{PipelineConfig, Stream, VideoRecord};
use crate::network::PgcnModel;
use crate::par;
use crate::proposal::Proposal;
use crate::trainer::{train, EpochMetrics, TrainState, TrainingVideo};

/// Largest annotated class id across `records`.
pub fn num_classes(records: &[VideoRecord]) -> usize {
    records
        .iter()
        .flat_map(|r| r.ground_truth.iter().flatten())
        .map(|g| g.label)
        .max()
        .unwrap_or(0)
}

/// Pools features, builds graphs, and labels samples for every annotated
/// video. Unannotated videos are skipped with a warning.
pub fn training_videos(records: &[VideoRecord], stream: Stream, config: &PipelineConfig) -> Result<Vec<TrainingVideo>> {
    let prepared = par::map_slice(records, |r| -> Result<Option<TrainingVideo>> {
        let Some(gt) = &r.ground_truth else {
            warn!("video {} has no annotations; excluded from training", r.id);
            return Ok(None);
        };
        let proposals = r.proposal_set(stream)?;
        TrainingVideo::prepare(r.id.clone(), proposals, gt, &config.graph, &config.labels, config.overlap).map(Some)
    });
    let mut out = Vec::with_capacity(records.len());
    for p in prepared {
        out.extend(p?);
    }
    Ok(out)
}

/// Trains a fresh model for one stream.
pub fn train_stream<F: FnMut(&EpochMetrics)>(
    records: &[VideoRecord],
    stream: Stream,
    config: &PipelineConfig,
    on_epoch: F,
) -> Result<TrainState> {
    config.validate()?;
    let classes = num_classes(records);
    if classes == 0 {
        return Err(Error::Missing("no annotated instances to train on".into()));
    }
    let videos = training_videos(records, stream, config)?;
    let feature_dim = videos
        .first()
        .map(|v| v.proposals.feature_dim())
        .ok_or_else(|| Error::Missing("no trainable videos".into()))?;
    let train_cfg = config.train_config(stream);
    let mut state = TrainState::new(&config.model_config(classes, feature_dim), &train_cfg)?;
    train(&videos, &mut state, &train_cfg, on_epoch)?;
    Ok(state)
}

/// Eval-mode predictions for one video and stream.
pub fn predict_video(model: &PgcnModel, record: &VideoRecord, stream: Stream, config: &PipelineConfig) -> Result<VideoPredictions> {
    let proposals = record.proposal_set(stream)?;
    let graph = build_graph(&proposals, &config.graph)?;
    infer_video(model, &graph, &proposals)
}

fn proposals_of(record: &VideoRecord) -> Vec<Proposal> {
    record
        .proposals
        .iter()
        .enumerate()
        .map(|(id, &(interval, confidence))| Proposal { id, interval, confidence })
        .collect()
}

/// Detections for every video, in input order. With both models the two
/// streams are fused with `config.eval.fusion_weights` (RGB first).
pub fn detect_dataset(
    records: &[VideoRecord],
    rgb: Option<&PgcnModel>,
    flow: Option<&PgcnModel>,
    config: &PipelineConfig,
    external: Option<&BTreeMap<String, ExternalLabels>>,
) -> Result<Vec<Detection>> {
    config.validate()?;
    if rgb.is_none() && flow.is_none() {
        return Err(Error::Config("inference needs at least one stream model".into()));
    }
    let per_video = par::map_slice(records, |r| -> Result<Vec<Detection>> {
        let a = rgb.map(|m| predict_video(m, r, Stream::Rgb, config)).transpose()?;
        let b = flow.map(|m| predict_video(m, r, Stream::Flow, config)).transpose()?;
        let preds = match (a, b) {
            (Some(a), Some(b)) => fuse_streams(&a, &b, config.eval.fusion_weights)?,
            (Some(p), None) | (None, Some(p)) => p,
            (None, None) => unreachable!(),
        };
        let ext = match external {
            Some(map) => Some(
                map.get(&r.id)
                    .ok_or_else(|| Error::Missing(format!("no external scores for video {}", r.id)))?,
            ),
            None => None,
        };
        decode_detections(&r.id, &proposals_of(r), &preds, ext, &config.eval)
    });
    let mut out = Vec::new();
    for d in per_video {
        out.extend(d?);
    }
    Ok(out)
}
