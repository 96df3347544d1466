//! Assigning training targets to proposals.

use crate::error::{Error, Result};
use crate::interval::{coverage, encode_offset, tiou, GroundTruthInstance, Interval, Offset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Foreground,
    Incomplete,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub proposal: usize,
    pub kind: SampleKind,
    /// 0 for background, otherwise the matched ground-truth class.
    pub class_target: usize,
    /// +1 for complete (foreground), −1 otherwise.
    pub completeness_target: f64,
    /// Present exactly for foreground samples.
    pub regression_target: Option<Offset>,
}

/// How "best overlap" is measured for incomplete samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapMode {
    /// Intersection over proposal length.
    Proposal,
    /// Intersection over ground-truth length.
    GroundTruth,
}

/// Sample-selection thresholds: foreground needs `tIoU ≥ fg_tiou`; incomplete
/// needs `OL ≥ inc_overlap` and `tIoU ≤ inc_tiou`; background needs
/// `tIoU ≤ bg_tiou`. Rules are tried in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelThresholds {
    pub fg_tiou: f64,
    pub inc_overlap: f64,
    pub inc_tiou: f64,
    pub bg_tiou: f64,
}

impl LabelThresholds {
    pub const THUMOS: LabelThresholds = LabelThresholds {
        fg_tiou: 0.7,
        inc_overlap: 0.7,
        inc_tiou: 0.3,
        bg_tiou: 0.0,
    };

    pub const ACTIVITYNET: LabelThresholds = LabelThresholds {
        fg_tiou: 0.7,
        inc_overlap: 0.7,
        inc_tiou: 0.6,
        bg_tiou: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.inc_tiou < self.fg_tiou && self.bg_tiou < self.inc_tiou) {
            return Err(Error::Config(format!(
                "label thresholds must satisfy bg_tiou < inc_tiou < fg_tiou, got {} / {} / {}",
                self.bg_tiou, self.inc_tiou, self.fg_tiou
            )));
        }
        Ok(())
    }
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self::THUMOS
    }
}

/// Index and value of the first maximum.
fn best_by<F: Fn(&GroundTruthInstance) -> f64>(gts: &[GroundTruthInstance], f: F) -> Option<(usize, f64)> {
    gts.iter()
        .map(f)
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
}

/// Labels every proposal that matches one of the three rules; the rest are
/// dropped. Output is ordered by proposal id.
pub fn label_samples(
    proposals: &[Interval],
    ground_truths: &[GroundTruthInstance],
    thresholds: &LabelThresholds,
    overlap: OverlapMode,
) -> Result<Vec<TrainingSample>> {
    thresholds.validate()?;
    let mut out = Vec::with_capacity(proposals.len());
    for (id, p) in proposals.iter().enumerate() {
        let best_iou = best_by(ground_truths, |g| tiou(p, &g.interval));
        let best_ol = best_by(ground_truths, |g| match overlap {
            OverlapMode::Proposal => coverage(p, &g.interval),
            OverlapMode::GroundTruth => coverage(&g.interval, p),
        });
        let iou = best_iou.map_or(0.0, |(_, v)| v);
        let ol = best_ol.map_or(0.0, |(_, v)| v);

        let sample = if let (Some((gi, _)), true) = (best_iou, iou >= thresholds.fg_tiou) {
            let gt = &ground_truths[gi];
            Some(TrainingSample {
                proposal: id,
                kind: SampleKind::Foreground,
                class_target: gt.label,
                completeness_target: 1.0,
                regression_target: Some(encode_offset(p, &gt.interval)),
            })
        } else if let (Some((gi, _)), true) = (
            best_ol,
            ol >= thresholds.inc_overlap && iou <= thresholds.inc_tiou,
        ) {
            Some(TrainingSample {
                proposal: id,
                kind: SampleKind::Incomplete,
                class_target: ground_truths[gi].label,
                completeness_target: -1.0,
                regression_target: None,
            })
        } else if iou <= thresholds.bg_tiou {
            Some(TrainingSample {
                proposal: id,
                kind: SampleKind::Background,
                class_target: 0,
                completeness_target: -1.0,
                regression_target: None,
            })
        } else {
            None
        };
        out.extend(sample);
    }
    Ok(out)
}
