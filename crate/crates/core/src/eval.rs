//! Inference, stream fusion, detection decoding, NMS, and mAP.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::debug;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::ProposalGraph;
use crate::heads::HeadOutputs;
use crate::interval::{decode_offset, tiou, GroundTruthInstance, Interval, Offset};
use crate::network::PgcnModel;
use crate::proposal::{Proposal, ProposalSet};

/// Per-proposal predictions of one video: `(C+1)` class probabilities,
/// `C` completeness scores, and `2C` offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPredictions {
    pub probs: Array2<f64>,
    pub completeness: Array2<f64>,
    pub regression: Array2<f64>,
}

impl From<HeadOutputs> for VideoPredictions {
    fn from(o: HeadOutputs) -> Self {
        Self {
            probs: o.probs,
            completeness: o.completeness,
            regression: o.regression,
        }
    }
}

impl VideoPredictions {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.completeness.ncols()
    }

    pub fn offset(&self, row: usize, class: usize) -> Offset {
        Offset {
            center: self.regression[[row, 2 * (class - 1)]],
            length: self.regression[[row, 2 * (class - 1) + 1]],
        }
    }
}

/// Eval-mode forward over every proposal of a video.
pub fn infer_video(model: &PgcnModel, graph: &ProposalGraph, proposals: &ProposalSet) -> Result<VideoPredictions> {
    Ok(model.infer(graph, proposals)?.into())
}

/// Weighted average of two streams' predictions, `(w_a·a + w_b·b) / (w_a + w_b)`.
/// Offsets are fused before decoding.
pub fn fuse_streams(a: &VideoPredictions, b: &VideoPredictions, weights: (f64, f64)) -> Result<VideoPredictions> {
    let (wa, wb) = weights;
    if !(wa >= 0.0 && wb >= 0.0 && wa + wb > 0.0 && (wa + wb).is_finite()) {
        return Err(Error::Config(format!("invalid fusion weights {wa}:{wb}")));
    }
    for (x, y, context) in [
        (&a.probs, &b.probs, "fused class probabilities"),
        (&a.completeness, &b.completeness, "fused completeness scores"),
        (&a.regression, &b.regression, "fused offsets"),
    ] {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: x.len(),
                actual: y.len(),
            });
        }
    }
    let (ka, kb) = (wa / (wa + wb), wb / (wa + wb));
    let mix = |x: &Array2<f64>, y: &Array2<f64>| {
        ndarray::Zip::from(x).and(y).map_collect(|&u, &v| ka * u + kb * v)
    };
    Ok(VideoPredictions {
        probs: mix(&a.probs, &b.probs),
        completeness: mix(&a.completeness, &b.completeness),
        regression: mix(&a.regression, &b.regression),
    })
}

/// `p_m · max(ĉ_m, 0)` for classes `1..=C`, index 0 holding class 1.
pub fn score_detections(probs: &[f64], completeness: &[f64]) -> Vec<f64> {
    completeness
        .iter()
        .enumerate()
        .map(|(m, &c)| probs[m + 1] * c.max(0.0))
        .collect()
}

/// Product of action, completeness, proposal, and external video-level scores.
pub fn score_with_external(s_act: f64, s_com: f64, s_bsn: f64, s_ext: f64) -> f64 {
    s_act * s_com.max(0.0) * s_bsn * s_ext
}

/// Externally predicted video-level classes with their scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLabels {
    pub classes: Vec<(usize, f64)>,
}

impl ExternalLabels {
    /// The `k` best classes, ties broken toward the lower class id.
    pub fn top(&self, k: usize) -> Vec<(usize, f64)> {
        let mut c = self.classes.clone();
        c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        c.truncate(k);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video: String,
    pub class: usize,
    pub interval: Interval,
    pub score: f64,
}

/// Score descending, then earlier start, then earlier end.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start().total_cmp(&b.interval.start()))
        .then(a.interval.end().total_cmp(&b.interval.end()))
}

/// Greedy suppression: keep the best remaining detection, drop everything
/// overlapping it with tIoU above `threshold`, repeat. Output is in rank order.
pub fn nms(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        if kept.iter().all(|k| tiou(&k.interval, &d.interval) <= threshold) {
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// RGB : Flow.
    pub fusion_weights: (f64, f64),
    pub nms_threshold: f64,
    pub top_k: usize,
    pub map_thresholds: Vec<f64>,
    /// When false, offsets are treated as zero and proposals are emitted as-is.
    pub regression: bool,
}

impl EvalConfig {
    pub fn thumos() -> Self {
        Self {
            fusion_weights: (2.0, 3.0),
            nms_threshold: 0.3,
            top_k: 600,
            map_thresholds: thumos_thresholds(),
            regression: true,
        }
    }

    pub fn activitynet() -> Self {
        Self {
            top_k: 100,
            map_thresholds: activitynet_thresholds(),
            ..Self::thumos()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.fusion_weights;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!("fusion weights must be positive, got {a}:{b}")));
        }
        let in_unit = |t: f64| t > 0.0 && t < 1.0;
        if !in_unit(self.nms_threshold) || !self.map_thresholds.iter().all(|&t| in_unit(t)) {
            return Err(Error::Config("tIoU thresholds must lie in (0, 1)".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::thumos()
    }
}

/// 0.1, 0.2, …, 0.7.
pub fn thumos_thresholds() -> Vec<f64> {
    (1..=7).map(|k| k as f64 / 10.0).collect()
}

/// 0.50, 0.55, …, 0.95.
pub fn activitynet_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Turns one video's predictions into its final detections: per-class
/// decoding and scoring, per-class NMS, then the global `top_k`.
///
/// With `external`, only its top two classes are emitted and each score is
/// multiplied by the proposal confidence and the external class score.
pub fn decode_detections(
    video: &str,
    proposals: &[Proposal],
    preds: &VideoPredictions,
    external: Option<&ExternalLabels>,
    config: &EvalConfig,
) -> Result<Vec<Detection>> {
    if proposals.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            context: "proposals vs predictions",
            expected: proposals.len(),
            actual: preds.len(),
        });
    }
    let num_classes = preds.num_classes();
    let classes: Vec<(usize, f64)> = match external {
        Some(ext) => ext
            .top(2)
            .into_iter()
            .filter(|&(c, _)| c >= 1 && c <= num_classes)
            .collect(),
        None => (1..=num_classes).map(|c| (c, 1.0)).collect(),
    };

    let mut out = Vec::new();
    for &(class, ext_score) in &classes {
        let mut candidates = Vec::with_capacity(proposals.len());
        for (row, p) in proposals.iter().enumerate() {
            let s_act = preds.probs[[row, class]];
            let s_com = preds.completeness[[row, class - 1]];
            let score = match external {
                Some(_) => score_with_external(s_act, s_com, p.confidence.unwrap_or(1.0), ext_score),
                None => s_act * s_com.max(0.0),
            };
            let interval = if config.regression {
                match decode_offset(&p.interval, &preds.offset(row, class)) {
                    Ok(iv) => iv,
                    Err(Error::InvalidInterval { .. }) => {
                        debug!("{video}: proposal {row} class {class} decodes outside the time axis; dropped");
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                p.interval
            };
            candidates.push(Detection {
                video: video.to_string(),
                class,
                interval,
                score,
            });
        }
        out.extend(nms(&candidates, config.nms_threshold));
    }
    out.sort_by(|a, b| rank_order(a, b).then(a.class.cmp(&b.class)));
    out.truncate(config.top_k);
    Ok(out)
}

/// Area under the precision-recall step curve after making precision
/// monotonically non-increasing (all-point interpolation).
///
/// `hits` lists detections in rank order, `true` for a match.
pub fn average_precision(hits: &[bool], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_positives as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// Ground truth of a whole split keyed by video id.
pub type GroundTruthMap = BTreeMap<String, Vec<GroundTruthInstance>>;

/// Rank-ordered match flags of one class's detections at one threshold.
/// Each detection takes the unmatched same-video ground truth of highest
/// tIoU and is a hit iff that tIoU exceeds `threshold`.
pub fn match_detections(
    detections: &[&Detection],
    ground_truth: &GroundTruthMap,
    class: usize,
    threshold: f64,
) -> Vec<bool> {
    let mut used: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut hits = Vec::with_capacity(detections.len());
    for d in detections {
        let Some(gts) = ground_truth.get(&d.video) else {
            hits.push(false);
            continue;
        };
        let flags = used.entry(d.video.as_str()).or_insert_with(|| vec![false; gts.len()]);
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, g)| g.label == class && !flags[*j])
            .map(|(j, g)| (j, tiou(&g.interval, &d.interval)))
            .fold(None::<(usize, f64)>, |b, (j, v)| match b {
                Some((_, bv)) if bv >= v => b,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v > threshold => {
                flags[j] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    hits
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    /// `mean_ap[t]` is the mAP at `thresholds[t]`.
    pub mean_ap: Vec<f64>,
    /// AP per class present in the ground truth, one entry per threshold.
    pub per_class: BTreeMap<usize, Vec<f64>>,
}

impl MapReport {
    pub fn average(&self) -> f64 {
        if self.mean_ap.is_empty() {
            0.0
        } else {
            self.mean_ap.iter().sum::<f64>() / self.mean_ap.len() as f64
        }
    }

    /// mAP at the threshold nearest to `t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| self.mean_ap[i])
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("tIoU   mAP\n");
        for (t, m) in self.thresholds.iter().zip(&self.mean_ap) {
            let _ = writeln!(s, "{t:<6.2} {m:.4}");
        }
        let _ = writeln!(s, "avg    {:.4}", self.average());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tiou,map\n");
        for (t, m) in self.thresholds.iter().zip(&self.mean_ap) {
            let _ = writeln!(s, "{t:.2},{m:.6}");
        }
        let _ = writeln!(s, "average,{:.6}", self.average());
        s
    }

    /// One row per class, one column per threshold.
    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class");
        for t in &self.thresholds {
            let _ = write!(s, ",ap@{t:.2}");
        }
        s.push('\n');
        for (c, aps) in &self.per_class {
            let _ = write!(s, "{c}");
            for ap in aps {
                let _ = write!(s, ",{ap:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Per-threshold mAP over classes present in `ground_truth`.
pub fn mean_average_precision(
    detections: &[Detection],
    ground_truth: &GroundTruthMap,
    thresholds: &[f64],
) -> Result<MapReport> {
    let classes: BTreeSet<usize> = ground_truth.values().flatten().map(|g| g.label).collect();
    if classes.is_empty() {
        return Err(Error::Missing("ground truth contains no instances".into()));
    }
    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
        dets.sort_by(|a, b| rank_order(a, b).then(a.video.cmp(&b.video)));
        let positives = ground_truth.values().flatten().filter(|g| g.label == class).count();
        let aps = thresholds
            .iter()
            .map(|&t| average_precision(&match_detections(&dets, ground_truth, class, t), positives))
            .collect();
        per_class.insert(class, aps);
    }
    let mean_ap = (0..thresholds.len())
        .map(|t| per_class.values().map(|v: &Vec<f64>| v[t]).sum::<f64>() / classes.len() as f64)
        .collect();
    Ok(MapReport {
        thresholds: thresholds.to_vec(),
        mean_ap,
        per_class,
    })
}
