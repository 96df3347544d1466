//! Dataset manifests.
//!
//! One video per line, tab-separated:
//!
//! ```text
//! video_id  duration  rgb  flow  proposals  annotations
//! ```
//!
//! File columns are paths relative to the manifest's directory, or `-` when
//! absent.

use std::path::{Path, PathBuf};

use log::warn;

use super::features::{read_features, write_features, SegmentFeatures, Stream};
use super::pooling::pool_all;
use super::text::{read_annotations, read_proposals, write_annotations, write_proposals};
use crate::error::{Error, Result};
use crate::interval::{GroundTruthInstance, Interval};
use crate::par;
use crate::proposal::ProposalSet;

pub const MANIFEST_HEADER: &str = "# video_id\tduration\trgb\tflow\tproposals\tannotations";

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub duration: f64,
    pub rgb: Option<SegmentFeatures>,
    pub flow: Option<SegmentFeatures>,
    pub proposals: Vec<(Interval, Option<f64>)>,
    /// `None` for unannotated (test) videos.
    pub ground_truth: Option<Vec<GroundTruthInstance>>,
}

impl VideoRecord {
    pub fn features(&self, stream: Stream) -> Option<&SegmentFeatures> {
        match stream {
            Stream::Rgb => self.rgb.as_ref(),
            Stream::Flow => self.flow.as_ref(),
        }
    }

    /// Pools one stream's features over every proposal.
    pub fn proposal_set(&self, stream: Stream) -> Result<ProposalSet> {
        let feats = self
            .features(stream)
            .ok_or_else(|| Error::Missing(format!("video {} has no {stream} features", self.id)))?;
        let intervals: Vec<Interval> = self.proposals.iter().map(|p| p.0).collect();
        let (f, e) = pool_all(feats.data.view(), self.duration, &intervals)?;
        ProposalSet::new(self.proposals.clone(), f, e)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() || self.id.contains(|c: char| c.is_whitespace() || c == '/' || c == '\\') {
            return Err(format!("invalid video id '{}'", self.id));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(format!("duration must be positive, got {}", self.duration));
        }
        for s in [&self.rgb, &self.flow].into_iter().flatten() {
            if s.num_segments() == 0 {
                return Err("feature file has no segments".into());
            }
        }
        if let (Some(a), Some(b)) = (&self.rgb, &self.flow) {
            if a.num_segments() != b.num_segments() {
                return Err(format!(
                    "rgb and flow segment counts differ ({} vs {})",
                    a.num_segments(),
                    b.num_segments()
                ));
            }
        }
        if let Some((iv, _)) = self.proposals.iter().find(|(iv, _)| iv.start() >= self.duration) {
            return Err(format!("proposal {iv} starts after the video ends ({})", self.duration));
        }
        Ok(())
    }
}

struct Entry {
    line: usize,
    id: String,
    duration: f64,
    files: [Option<PathBuf>; 4],
}

fn parse_manifest(path: &Path, text: &str) -> Result<Vec<Entry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = l.split('\t').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(Error::parse(path, line, format!("expected 6 tab-separated columns, found {}", cols.len())));
        }
        let duration: f64 = cols[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid duration '{}'", cols[1])))?;
        let file = |c: &str| (c != "-").then(|| base.join(c));
        out.push(Entry {
            line,
            id: cols[0].to_string(),
            duration,
            files: [file(cols[2]), file(cols[3]), file(cols[4]), file(cols[5])],
        });
    }
    Ok(out)
}

fn load_entry(manifest: &Path, e: &Entry) -> Result<VideoRecord> {
    let stream = |p: &Option<PathBuf>, s: Stream| -> Result<Option<SegmentFeatures>> {
        let Some(p) = p else { return Ok(None) };
        let f = read_features(p)?;
        if f.stream != s {
            return Err(Error::format(p, format!("expected {s} features, file is tagged {}", f.stream)));
        }
        Ok(Some(f))
    };
    let record = VideoRecord {
        id: e.id.clone(),
        duration: e.duration,
        rgb: stream(&e.files[0], Stream::Rgb)?,
        flow: stream(&e.files[1], Stream::Flow)?,
        proposals: match &e.files[2] {
            Some(p) => read_proposals(p)?,
            None => Vec::new(),
        },
        ground_truth: e.files[3].as_deref().map(read_annotations).transpose()?,
    };
    record.validate().map_err(|m| Error::parse(manifest, e.line, m))?;
    Ok(record)
}

/// Loads every video listed in the manifest, in manifest order. A relative
/// manifest path that does not exist is looked up under `$PGCN_DATA_ROOT`.
pub fn load_dataset(manifest: &Path) -> Result<Vec<VideoRecord>> {
    let resolved = super::config::resolve_data_path(manifest);
    let manifest = resolved.as_path();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let entries = parse_manifest(manifest, &text)?;
    if entries.is_empty() {
        warn!("{}: manifest lists no videos", manifest.display());
    }
    par::map_slice(&entries, |e| load_entry(manifest, e)).into_iter().collect()
}

/// Writes each record's files under `dir` plus `dir/manifest.tsv`, returning
/// the manifest path.
pub fn write_dataset(dir: &Path, records: &[VideoRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for r in records {
        r.validate().map_err(|m| Error::Config(format!("video {}: {m}", r.id)))?;
        let mut cols = vec![r.id.clone(), format!("{}", r.duration)];
        for (s, f) in [(Stream::Rgb, &r.rgb), (Stream::Flow, &r.flow)] {
            cols.push(match f {
                Some(f) => {
                    let name = format!("{}.{s}.feat", r.id);
                    write_features(&dir.join(&name), f)?;
                    name
                }
                None => "-".into(),
            });
        }
        let name = format!("{}.proposals.txt", r.id);
        write_proposals(&dir.join(&name), &r.proposals)?;
        cols.push(name);
        cols.push(match &r.ground_truth {
            Some(g) => {
                let name = format!("{}.annotations.txt", r.id);
                write_annotations(&dir.join(&name), g)?;
                name
            }
            None => "-".into(),
        });
        manifest.push_str(&cols.join("\t"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
