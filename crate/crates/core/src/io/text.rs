//! Line-oriented text formats. Blank lines and lines starting with `#` are
//! ignored everywhere.
//!
//! | file        | columns                                   | separator  |
//! |-------------|-------------------------------------------|------------|
//! | proposals   | `t_start t_end [confidence]`              | whitespace |
//! | annotations | `t_start t_end label`                     | whitespace |
//! | detections  | `video t_start t_end class score`         | tab        |
//! | ground truth| `video t_start t_end class`               | tab        |
//! | external    | `video class score`                       | tab        |

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{Detection, ExternalLabels, GroundTruthMap};
use crate::interval::{GroundTruthInstance, Interval};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Numbered, trimmed, non-comment lines.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
}

impl Fields<'_> {
    fn parse<T: FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| Error::parse(self.path, self.line, format!("invalid {what} '{s}'")))
    }

    fn arity(&self, got: usize, allowed: &[usize]) -> Result<()> {
        if allowed.contains(&got) {
            Ok(())
        } else {
            Err(Error::parse(
                self.path,
                self.line,
                format!("expected {allowed:?} columns, found {got}"),
            ))
        }
    }

    fn interval(&self, a: &str, b: &str) -> Result<Interval> {
        let (s, e) = (self.parse(a, "start time")?, self.parse(b, "end time")?);
        Interval::new(s, e).map_err(|err| Error::parse(self.path, self.line, err.to_string()))
    }

    fn instance(&self, a: &str, b: &str, label: &str) -> Result<GroundTruthInstance> {
        let iv = self.interval(a, b)?;
        let label = self.parse(label, "class label")?;
        GroundTruthInstance::new(iv, label).map_err(|err| Error::parse(self.path, self.line, err.to_string()))
    }
}

pub fn parse_proposals(path: &Path, text: &str) -> Result<Vec<(Interval, Option<f64>)>> {
    content_lines(text)
        .map(|(line, l)| {
            let f = Fields { path, line };
            let cols: Vec<&str> = l.split_whitespace().collect();
            f.arity(cols.len(), &[2, 3])?;
            let iv = f.interval(cols[0], cols[1])?;
            let conf = cols.get(2).map(|c| f.parse::<f64>(c, "confidence")).transpose()?;
            if conf.is_some_and(|c| !c.is_finite()) {
                return Err(Error::parse(path, line, "confidence must be finite"));
            }
            Ok((iv, conf))
        })
        .collect()
}

pub fn read_proposals(path: &Path) -> Result<Vec<(Interval, Option<f64>)>> {
    parse_proposals(path, &read(path)?)
}

pub fn write_proposals(path: &Path, proposals: &[(Interval, Option<f64>)]) -> Result<()> {
    let mut s = String::new();
    for (iv, c) in proposals {
        match c {
            Some(c) => s.push_str(&format!("{} {} {}\n", iv.start(), iv.end(), c)),
            None => s.push_str(&format!("{} {}\n", iv.start(), iv.end())),
        }
    }
    write(path, &s)
}

pub fn parse_annotations(path: &Path, text: &str) -> Result<Vec<GroundTruthInstance>> {
    content_lines(text)
        .map(|(line, l)| {
            let f = Fields { path, line };
            let cols: Vec<&str> = l.split_whitespace().collect();
            f.arity(cols.len(), &[3])?;
            f.instance(cols[0], cols[1], cols[2])
        })
        .collect()
}

pub fn read_annotations(path: &Path) -> Result<Vec<GroundTruthInstance>> {
    parse_annotations(path, &read(path)?)
}

pub fn write_annotations(path: &Path, instances: &[GroundTruthInstance]) -> Result<()> {
    let s: String = instances
        .iter()
        .map(|g| format!("{} {} {}\n", g.interval.start(), g.interval.end(), g.label))
        .collect();
    write(path, &s)
}

fn tab_cols(l: &str) -> Vec<&str> {
    l.split('\t').map(str::trim).collect()
}

pub fn format_detections(detections: &[Detection]) -> String {
    detections
        .iter()
        .map(|d| {
            format!(
                "{}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
                d.video,
                d.interval.start(),
                d.interval.end(),
                d.class,
                d.score
            )
        })
        .collect()
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write(path, &format_detections(detections))
}

pub fn parse_detections(path: &Path, text: &str) -> Result<Vec<Detection>> {
    content_lines(text)
        .map(|(line, l)| {
            let f = Fields { path, line };
            let cols = tab_cols(l);
            f.arity(cols.len(), &[5])?;
            let score: f64 = f.parse(cols[4], "score")?;
            if !(score >= 0.0 && score.is_finite()) {
                return Err(Error::parse(path, line, format!("score must be a non-negative number, got {score}")));
            }
            let class: usize = f.parse(cols[3], "class")?;
            if class == 0 {
                return Err(Error::parse(path, line, "detection class must be at least 1"));
            }
            Ok(Detection {
                video: cols[0].to_string(),
                class,
                interval: f.interval(cols[1], cols[2])?,
                score,
            })
        })
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(path, &read(path)?)
}

pub fn parse_ground_truth(path: &Path, text: &str) -> Result<GroundTruthMap> {
    let mut map = GroundTruthMap::new();
    for (line, l) in content_lines(text) {
        let f = Fields { path, line };
        let cols = tab_cols(l);
        f.arity(cols.len(), &[4])?;
        let g = f.instance(cols[1], cols[2], cols[3])?;
        map.entry(cols[0].to_string()).or_default().push(g);
    }
    Ok(map)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthMap> {
    parse_ground_truth(path, &read(path)?)
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruthMap) -> Result<()> {
    let mut s = String::new();
    for (video, instances) in gt {
        for g in instances {
            s.push_str(&format!("{video}\t{}\t{}\t{}\n", g.interval.start(), g.interval.end(), g.label));
        }
    }
    write(path, &s)
}

/// External video-level class scores keyed by video id.
pub fn read_external_labels(path: &Path) -> Result<std::collections::BTreeMap<String, ExternalLabels>> {
    let text = read(path)?;
    let mut map = std::collections::BTreeMap::<String, ExternalLabels>::new();
    for (line, l) in content_lines(&text) {
        let f = Fields { path, line };
        let cols = tab_cols(l);
        f.arity(cols.len(), &[3])?;
        let class: usize = f.parse(cols[1], "class")?;
        let score: f64 = f.parse(cols[2], "score")?;
        map.entry(cols[0].to_string())
            .or_insert_with(|| ExternalLabels { classes: Vec::new() })
            .classes
            .push((class, score));
    }
    Ok(map)
}
