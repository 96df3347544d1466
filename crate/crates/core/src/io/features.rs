//! Per-video segment feature files.
//!
//! ```text
//! magic         8 bytes   "PGCNFEAT"
//! version       u32       1
//! stream        u32       0 rgb, 1 flow
//! num_segments  u64
//! dim           u64
//! payload       num_segments·dim f32, row-major
//! ```
//! All fields little-endian.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"PGCNFEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub fn tag(&self) -> u32 {
        match self {
            Stream::Rgb => 0,
            Stream::Flow => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Stream::Rgb),
            1 => Some(Stream::Flow),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Stream::Rgb),
            "flow" => Ok(Stream::Flow),
            other => Err(Error::Config(format!("unknown stream '{other}' (expected rgb or flow)"))),
        }
    }
}

/// One stream's segment features, `num_segments × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub stream: Stream,
    pub data: Array2<f32>,
}

impl SegmentFeatures {
    pub fn num_segments(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

pub fn write_features(path: &Path, features: &SegmentFeatures) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FEATURE_MAGIC)?;
        w.write_u32::<LE>(FEATURE_VERSION)?;
        w.write_u32::<LE>(features.stream.tag())?;
        w.write_u64::<LE>(features.num_segments() as u64)?;
        w.write_u64::<LE>(features.dim() as u64)?;
        for &v in features.data.iter() {
            w.write_f32::<LE>(v)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<SegmentFeatures> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fail = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated feature file")
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(fail)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format(path, "not a feature file (bad magic)"));
    }
    let version = r.read_u32::<LE>().map_err(fail)?;
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported feature file version {version}")));
    }
    let tag = r.read_u32::<LE>().map_err(fail)?;
    let stream = Stream::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown stream tag {tag}")))?;
    let n = r.read_u64::<LE>().map_err(fail)? as usize;
    let d = r.read_u64::<LE>().map_err(fail)? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(path, format!("empty feature matrix {n}x{d}")));
    }
    let count = n
        .checked_mul(d)
        .filter(|&c| c <= 1 << 32)
        .ok_or_else(|| Error::format(path, format!("implausible shape {n}x{d}")))?;
    let mut data = vec![0f32; count];
    r.read_f32_into::<LE>(&mut data).map_err(fail)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    Ok(SegmentFeatures {
        stream,
        data: Array2::from_shape_vec((n, d), data).expect("length matches shape"),
    })
}
