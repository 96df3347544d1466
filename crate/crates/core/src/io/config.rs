//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. A `profile` key, wherever it
//! appears, is applied first; the remaining keys override it in file order.
//! [`PipelineConfig::to_text`] writes every key with its current value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{activitynet_thresholds, thumos_thresholds, EvalConfig};
use crate::gcn::{AggregationMode, Sampling};
use crate::graph::GraphConfig;
use crate::labels::{LabelThresholds, OverlapMode};
use crate::network::ModelConfig;
use crate::trainer::{LrSchedule, TrainConfig};

use super::features::Stream;
use super::synth::SyntheticSpec;

/// Directory consulted for relative data paths that do not exist as given.
pub const DATA_ROOT_ENV: &str = "PGCN_DATA_ROOT";

/// `path` itself when it exists or is absolute, else `$PGCN_DATA_ROOT/path`
/// when that variable is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Thumos,
    ActivityNet,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thumos" | "thumos14" => Ok(Profile::Thumos),
            "activitynet" | "anet" => Ok(Profile::ActivityNet),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected thumos or activitynet)"))),
        }
    }
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Thumos => "thumos",
            Profile::ActivityNet => "activitynet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub graph: GraphConfig,
    pub num_layers: usize,
    pub hidden_dim: Option<usize>,
    pub dropout: f64,
    pub mode: AggregationMode,
    pub train: TrainConfig,
    pub lr_rgb: f64,
    pub lr_flow: f64,
    pub labels: LabelThresholds,
    pub overlap: OverlapMode,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Thumos)
    }
}

fn pair<T: FromStr>(v: &str, sep: char) -> Option<(T, T)> {
    let (a, b) = v.split_once(sep)?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{v}' for {key}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

/// `(line, key, value)` triples.
fn entries<'a>(path: &Path, text: &'a str) -> Result<Vec<(usize, &'a str, &'a str)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, format!("expected key = value, found '{l}'")))?;
        out.push((i + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

fn apply_all<F>(path: &Path, items: &[(usize, &str, &str)], mut set: F) -> Result<()>
where
    F: FnMut(&str, &str) -> Result<()>,
{
    for &(line, k, v) in items {
        set(k, v).map_err(|e| match e {
            Error::Config(m) => Error::parse(path, line, m),
            other => other,
        })?;
    }
    Ok(())
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (labels, batch, eval) = match profile {
            Profile::Thumos => (LabelThresholds::THUMOS, 32, EvalConfig::thumos()),
            Profile::ActivityNet => (LabelThresholds::ACTIVITYNET, 64, EvalConfig::activitynet()),
        };
        Self {
            profile,
            graph: GraphConfig::default(),
            num_layers: 2,
            hidden_dim: None,
            dropout: 0.8,
            mode: AggregationMode::Gcn,
            train: TrainConfig {
                batch_size: batch,
                ..TrainConfig::default()
            },
            lr_rgb: 0.001,
            lr_flow: 0.01,
            labels,
            overlap: OverlapMode::Proposal,
            eval,
        }
    }

    pub fn lr_for(&self, stream: Stream) -> f64 {
        match stream {
            Stream::Rgb => self.lr_rgb,
            Stream::Flow => self.lr_flow,
        }
    }

    pub fn model_config(&self, num_classes: usize, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            feature_dim,
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            mode: self.mode,
        }
    }

    /// Training settings with the stream's initial learning rate.
    pub fn train_config(&self, stream: Stream) -> TrainConfig {
        TrainConfig {
            schedule: LrSchedule {
                initial: self.lr_for(stream),
                ..self.train.schedule
            },
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.train.validate()?;
        self.labels.validate()?;
        self.eval.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "profile" => *self = Self::for_profile(v.parse()?),
            "theta_ctx" => self.graph.theta_ctx = parse(key, v)?,
            "theta_sur" => self.graph.theta_sur = parse(key, v)?,
            "max_neighbors" => self.graph.max_neighbors = parse(key, v)?,
            "ctx_sur_ratio" => {
                self.graph.ctx_sur_ratio =
                    pair(v, ':').ok_or_else(|| Error::Config(format!("invalid ratio '{v}' for {key}")))?
            }
            "edge_cap" => self.graph.cap = parse_bool(key, v)?,
            "contextual_edges" => self.graph.contextual = parse_bool(key, v)?,
            "surrounding_edges" => self.graph.surrounding = parse_bool(key, v)?,
            "num_layers" => self.num_layers = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = if v == "auto" { None } else { Some(parse(key, v)?) },
            "dropout" => self.dropout = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "sample_ratio" => {
                let p: Vec<usize> = v
                    .split(':')
                    .map(|x| parse(key, x.trim()))
                    .collect::<Result<_>>()?;
                if p.len() != 3 {
                    return Err(Error::Config(format!("sample_ratio needs three parts, got '{v}'")));
                }
                self.train.sample_ratio = (p[0], p[1], p[2]);
            }
            "lr_rgb" => self.lr_rgb = parse(key, v)?,
            "lr_flow" => self.lr_flow = parse(key, v)?,
            "lr_decay_every" => self.train.schedule.every = parse(key, v)?,
            "lr_decay_factor" => self.train.schedule.factor = parse(key, v)?,
            "neighbor_samples" => {
                self.train.sampling = if v == "all" {
                    Sampling::Full
                } else {
                    Sampling::Uniform(parse(key, v)?)
                }
            }
            "momentum" => self.train.momentum = parse(key, v)?,
            "clip_norm" => self.train.clip_norm = if v == "none" { None } else { Some(parse(key, v)?) },
            "lambda_reg" => self.train.loss.lambda_reg = parse(key, v)?,
            "lambda_com" => self.train.loss.lambda_com = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "fg_tiou" => self.labels.fg_tiou = parse(key, v)?,
            "inc_overlap" => self.labels.inc_overlap = parse(key, v)?,
            "inc_tiou" => self.labels.inc_tiou = parse(key, v)?,
            "bg_tiou" => self.labels.bg_tiou = parse(key, v)?,
            "overlap_mode" => {
                self.overlap = match v {
                    "proposal" => OverlapMode::Proposal,
                    "ground_truth" => OverlapMode::GroundTruth,
                    _ => return Err(Error::Config(format!("invalid overlap_mode '{v}'"))),
                }
            }
            "fusion_rgb" => self.eval.fusion_weights.0 = parse(key, v)?,
            "fusion_flow" => self.eval.fusion_weights.1 = parse(key, v)?,
            "nms_threshold" => self.eval.nms_threshold = parse(key, v)?,
            "top_k" => self.eval.top_k = parse(key, v)?,
            "map_thresholds" => {
                self.eval.map_thresholds = match v {
                    "thumos" => thumos_thresholds(),
                    "activitynet" => activitynet_thresholds(),
                    _ => parse_list(key, v)?,
                }
            }
            "regression" => self.eval.regression = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(path: &Path, text: &str) -> Result<Self> {
        let items = entries(path, text)?;
        let mut cfg = Self::default();
        let (profile, rest): (Vec<_>, Vec<_>) = items.into_iter().partition(|(_, k, _)| *k == "profile");
        apply_all(path, &profile, |k, v| cfg.set(k, v))?;
        apply_all(path, &rest, |k, v| cfg.set(k, v))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(path, &text)
    }

    pub fn to_text(&self) -> String {
        let g = &self.graph;
        let t = &self.train;
        let l = &self.labels;
        let e = &self.eval;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("profile", self.profile.as_str().into());
        kv("theta_ctx", g.theta_ctx.to_string());
        kv("theta_sur", g.theta_sur.to_string());
        kv("max_neighbors", g.max_neighbors.to_string());
        kv("ctx_sur_ratio", format!("{}:{}", g.ctx_sur_ratio.0, g.ctx_sur_ratio.1));
        kv("edge_cap", g.cap.to_string());
        kv("contextual_edges", g.contextual.to_string());
        kv("surrounding_edges", g.surrounding.to_string());
        kv("num_layers", self.num_layers.to_string());
        kv("hidden_dim", self.hidden_dim.map_or("auto".into(), |h| h.to_string()));
        kv("dropout", self.dropout.to_string());
        kv("mode", self.mode.as_str().into());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("sample_ratio", format!("{}:{}:{}", t.sample_ratio.0, t.sample_ratio.1, t.sample_ratio.2));
        kv("lr_rgb", self.lr_rgb.to_string());
        kv("lr_flow", self.lr_flow.to_string());
        kv("lr_decay_every", t.schedule.every.to_string());
        kv("lr_decay_factor", t.schedule.factor.to_string());
        kv(
            "neighbor_samples",
            match t.sampling {
                Sampling::Uniform(n) => n.to_string(),
                Sampling::Full => "all".into(),
            },
        );
        kv("momentum", t.momentum.to_string());
        kv("clip_norm", t.clip_norm.map_or("none".into(), |c| c.to_string()));
        kv("lambda_reg", t.loss.lambda_reg.to_string());
        kv("lambda_com", t.loss.lambda_com.to_string());
        kv("seed", t.seed.to_string());
        kv("fg_tiou", l.fg_tiou.to_string());
        kv("inc_overlap", l.inc_overlap.to_string());
        kv("inc_tiou", l.inc_tiou.to_string());
        kv("bg_tiou", l.bg_tiou.to_string());
        kv(
            "overlap_mode",
            match self.overlap {
                OverlapMode::Proposal => "proposal".into(),
                OverlapMode::GroundTruth => "ground_truth".into(),
            },
        );
        kv("fusion_rgb", e.fusion_weights.0.to_string());
        kv("fusion_flow", e.fusion_weights.1.to_string());
        kv("nms_threshold", e.nms_threshold.to_string());
        kv("top_k", e.top_k.to_string());
        kv(
            "map_thresholds",
            e.map_thresholds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("regression", e.regression.to_string());
        s
    }
}

impl SyntheticSpec {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "videos" => self.videos = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "proposals_per_video" => self.proposals_per_video = parse(key, v)?,
            "feature_dim" => self.feature_dim = parse(key, v)?,
            "separation" => self.separation = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "segments_per_video" => self.segments_per_video = parse(key, v)?,
            "segment_seconds" => self.segment_seconds = parse(key, v)?,
            "max_instances" => self.max_instances = parse(key, v)?,
            "context" => self.context = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown synthetic spec key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(path: &Path, text: &str) -> Result<Self> {
        let mut spec = Self::default();
        apply_all(path, &entries(path, text)?, |k, v| spec.set(k, v))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(path, &text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "videos = {}\nclasses = {}\nproposals_per_video = {}\nfeature_dim = {}\nseparation = {}\nnoise = {}\nseed = {}\nsegments_per_video = {}\nsegment_seconds = {}\nmax_instances = {}\ncontext = {}\n",
            self.videos,
            self.classes,
            self.proposals_per_video,
            self.feature_dim,
            self.separation,
            self.noise,
            self.seed,
            self.segments_per_video,
            self.segment_seconds,
            self.max_instances,
            self.context
        )
    }
}
