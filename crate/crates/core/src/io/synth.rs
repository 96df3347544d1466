//! Seeded synthetic datasets.
//!
//! Every class owns a prototype direction in feature space; background has
//! its own. Segments inside an annotated instance carry the class prototype,
//! the rest carry the background prototype, and every entry receives Gaussian
//! noise. Four ramp axes mark instance boundaries, decaying over a few
//! segments on each side of the start and the end, so pooled features of a
//! misaligned proposal reveal the direction and rough size of its offset.
//! Proposals are jittered copies of instances (foreground), short
//! pieces strictly inside instances (incomplete), and intervals in the gaps
//! (background).
//!
//! In context mode classes come in pairs that share one action prototype and
//! differ only in a context block on each side of the instance. Block
//! segments carry the shared action prototype plus a per-class context axis. The blocks
//! sit past the reach of a proposal's extended window but close enough for
//! a proposal covering a block to be a surrounding neighbor of both the
//! foreground copies and the incomplete pieces, which hug the instance edges.
//! Telling a pair apart therefore needs information from other proposals.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::features::{SegmentFeatures, Stream};
use super::manifest::{write_dataset, VideoRecord};
use super::text::write_ground_truth;
use crate::error::{Error, Result};
use crate::eval::GroundTruthMap;
use crate::interval::{GroundTruthInstance, Interval};
use crate::par;

const MIN_GAP: usize = 4;
/// Segments covered by each boundary ramp.
const RAMP: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub classes: usize,
    pub proposals_per_video: usize,
    pub feature_dim: usize,
    /// Prototype magnitude.
    pub separation: f64,
    /// Standard deviation of per-entry Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub segments_per_video: usize,
    pub segment_seconds: f64,
    pub max_instances: usize,
    pub context: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            videos: 10,
            classes: 3,
            proposals_per_video: 40,
            feature_dim: 16,
            separation: 1.0,
            noise: 0.1,
            seed: 0,
            segments_per_video: 128,
            segment_seconds: 1.28,
            max_instances: 3,
            context: false,
        }
    }
}

impl SyntheticSpec {
    fn groups(&self) -> usize {
        self.classes.div_ceil(2)
    }

    /// Prototype axes: background plus class or group plus context axes.
    fn prototype_dim(&self) -> usize {
        if self.context {
            1 + self.groups() + self.classes
        } else {
            1 + self.classes
        }
    }

    /// Prototype axes plus the four boundary ramps.
    pub fn required_dim(&self) -> usize {
        self.prototype_dim() + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.classes == 0 || self.proposals_per_video == 0 || self.max_instances == 0 {
            return Err(Error::Config("videos, classes, proposals and max_instances must be positive".into()));
        }
        if self.feature_dim < self.required_dim() {
            return Err(Error::Config(format!(
                "feature_dim {} is below the {} prototype axes this spec needs",
                self.feature_dim,
                self.required_dim()
            )));
        }
        if !(self.separation >= 0.0 && self.noise >= 0.0 && self.segment_seconds > 0.0) {
            return Err(Error::Config(
                "separation and noise must be non-negative, segment_seconds positive".into(),
            ));
        }
        let need = self.max_instances * footprint(self.max_len(), self.context) + (self.max_instances + 1) * MIN_GAP;
        if self.segments_per_video < need {
            return Err(Error::Config(format!(
                "{} segments cannot hold {} instances; need at least {need}",
                self.segments_per_video, self.max_instances
            )));
        }
        Ok(())
    }

    fn max_len(&self) -> usize {
        if self.context {
            20
        } else {
            24
        }
    }

    fn action_axis(&self, class: usize) -> usize {
        if self.context {
            1 + (class - 1) / 2
        } else {
            class
        }
    }

    fn context_axis(&self, class: usize) -> usize {
        1 + self.groups() + (class - 1)
    }
}

/// Gap between an instance and its context block, and the block length.
fn context_extent(len: usize) -> (usize, usize) {
    ((66 * len).div_ceil(100), (16 * len).div_ceil(10))
}

/// Segments occupied by an instance of `len` segments and its context blocks.
fn footprint(len: usize, context: bool) -> usize {
    if context {
        let (g, k) = context_extent(len);
        len + 2 * (g + k)
    } else {
        len
    }
}

/// `[start, end)` in segment units.
#[derive(Clone, Copy)]
struct Span {
    start: usize,
    end: usize,
    class: usize,
}

impl Span {
    fn len(&self) -> usize {
        self.end - self.start
    }

    /// Left and right context blocks.
    fn context_blocks(&self) -> [(usize, usize); 2] {
        let (g, k) = context_extent(self.len());
        [
            (self.start - g - k, self.start - g),
            (self.end + g, self.end + g + k),
        ]
    }

    fn reserved(&self, context: bool) -> (usize, usize) {
        let pad = (footprint(self.len(), context) - self.len()) / 2;
        (self.start - pad, self.end + pad)
    }
}

fn layout(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Span> {
    let k = rng.random_range(1..=spec.max_instances);
    let lens: Vec<usize> = (0..k).map(|_| rng.random_range(12..=spec.max_len())).collect();
    let used: usize = lens.iter().map(|&l| footprint(l, spec.context)).sum::<usize>() + (k + 1) * MIN_GAP;
    // scatter the slack across the k + 1 gaps
    let mut gaps = vec![MIN_GAP; k + 1];
    for _ in 0..spec.segments_per_video - used {
        gaps[rng.random_range(0..=k)] += 1;
    }
    let mut spans = Vec::with_capacity(k);
    let mut t = 0;
    for (i, len) in lens.into_iter().enumerate() {
        let pad = (footprint(len, spec.context) - len) / 2;
        t += gaps[i] + pad;
        spans.push(Span {
            start: t,
            end: t + len,
            class: rng.random_range(1..=spec.classes),
        });
        t += len + pad;
    }
    spans
}

fn segment_features(spec: &SyntheticSpec, spans: &[Span], stream: Stream, rng: &mut ChaCha8Rng) -> SegmentFeatures {
    let n = spec.segments_per_video;
    // each segment carries one or two prototype axes
    let mut axes = vec![(0usize, None); n];
    // ramps peak at the boundary: outside before the start, inside after
    // it, inside before the end, outside after it
    let mut ramps = vec![[0.0f64; 4]; n];
    let ramp = spec.prototype_dim();
    for s in spans {
        for a in &mut axes[s.start..s.end] {
            *a = (spec.action_axis(s.class), None);
        }
        if spec.context {
            for (a, b) in s.context_blocks() {
                for x in &mut axes[a..b] {
                    *x = (spec.action_axis(s.class), Some(spec.context_axis(s.class)));
                }
            }
        }
        for k in 0..RAMP {
            let v = (RAMP - k) as f64 / RAMP as f64;
            ramps[s.start - 1 - k][0] = v;
            ramps[s.start + k][1] = v;
            ramps[s.end - 1 - k][2] = v;
            ramps[s.end + k][3] = v;
        }
    }
    let mut data = Array2::<f32>::zeros((n, spec.feature_dim));
    for (i, mut row) in data.outer_iter_mut().enumerate() {
        let (first, second) = axes[i];
        for (j, v) in row.iter_mut().enumerate() {
            let on = j == first || Some(j) == second;
            let mut base = if on { spec.separation } else { 0.0 };
            if (ramp..ramp + 4).contains(&j) {
                base += spec.separation * ramps[i][j - ramp];
            }
            let z: f64 = rng.sample(StandardNormal);
            *v = (base + spec.noise * z) as f32;
        }
    }
    SegmentFeatures { stream, data }
}

fn proposals(spec: &SyntheticSpec, spans: &[Span], rng: &mut ChaCha8Rng) -> Vec<(Interval, Option<f64>)> {
    let seg = spec.segment_seconds;
    let duration = spec.segments_per_video as f64 * seg;
    // regions outside every instance and its context blocks
    let mut free = Vec::new();
    let mut t = 0;
    for s in spans {
        let (a, b) = s.reserved(spec.context);
        free.push((t, a));
        t = b;
    }
    free.push((t, spec.segments_per_video));
    free.retain(|&(a, b)| b > a);

    (0..spec.proposals_per_video)
        .map(|i| {
            let iv = match i % 10 {
                0..=2 => {
                    let s = spans[rng.random_range(0..spans.len())];
                    let len = s.len() as f64 * seg;
                    let a = s.start as f64 * seg + rng.random_range(-0.08..0.08) * len;
                    let b = s.end as f64 * seg + rng.random_range(-0.08..0.08) * len;
                    Interval::new(a.max(0.0), b.min(duration))
                }
                3..=6 => {
                    let s = spans[rng.random_range(0..spans.len())];
                    let len = s.len() as f64 * seg;
                    let piece = rng.random_range(0.15..0.28) * len;
                    let a = if spec.context {
                        // anchored at an edge so the nearer context block is in range
                        let inset = rng.random_range(0.0..0.05) * len;
                        if rng.random_bool(0.5) {
                            s.start as f64 * seg + inset
                        } else {
                            s.end as f64 * seg - inset - piece
                        }
                    } else {
                        s.start as f64 * seg + rng.random_range(0.0..len - piece)
                    };
                    Interval::new(a, a + piece)
                }
                7 | 8 if spec.context => {
                    // cycle through every block so each one gets a proposal
                    let k = (i / 10 * 2 + i % 10 - 7) % (2 * spans.len());
                    let (a, b) = spans[k / 2].context_blocks()[k % 2];
                    Interval::new(a as f64 * seg, b as f64 * seg)
                }
                _ => {
                    let (a, b) = free[rng.random_range(0..free.len())];
                    let (a, b) = (a as f64 * seg, b as f64 * seg);
                    let len = rng.random_range(0.2..1.0) * (b - a).min(8.0 * seg);
                    let start = a + rng.random_range(0.0..=(b - a - len));
                    Interval::new(start, start + len)
                }
            };
            (iv.expect("generated intervals are valid"), Some(1.0))
        })
        .collect()
}

fn video(spec: &SyntheticSpec, index: usize) -> VideoRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let spans = layout(spec, &mut rng);
    let rgb = segment_features(spec, &spans, Stream::Rgb, &mut rng);
    let flow = segment_features(spec, &spans, Stream::Flow, &mut rng);
    let proposals = proposals(spec, &spans, &mut rng);
    let seg = spec.segment_seconds;
    let ground_truth = spans
        .iter()
        .map(|s| {
            GroundTruthInstance::new(
                Interval::new(s.start as f64 * seg, s.end as f64 * seg).expect("valid span"),
                s.class,
            )
            .expect("class ≥ 1")
        })
        .collect();
    VideoRecord {
        id: format!("video_{index:04}"),
        duration: spec.segments_per_video as f64 * seg,
        rgb: Some(rgb),
        flow: Some(flow),
        proposals,
        ground_truth: Some(ground_truth),
    }
}

/// In-memory dataset; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoRecord>> {
    spec.validate()?;
    Ok(par::map_range(spec.videos, |i| video(spec, i)))
}

/// Split-level ground truth of annotated records.
pub fn ground_truth_map(records: &[VideoRecord]) -> GroundTruthMap {
    records
        .iter()
        .filter_map(|r| r.ground_truth.as_ref().map(|g| (r.id.clone(), g.clone())))
        .collect()
}

/// Generates and writes a dataset under `dir`: per-video files,
/// `manifest.tsv`, and `ground_truth.tsv`. Returns the manifest path.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    let records = generate_synthetic(spec)?;
    let manifest = write_dataset(dir, &records)?;
    write_ground_truth(&dir.join("ground_truth.tsv"), &ground_truth_map(&records))?;
    Ok(manifest)
}
