//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic         8 bytes   "PGCNCKPT"
//! version       u32       1
//! mode          u32       0 gcn, 1 mlp, 2 mean-pool
//! flags         u32       bit 0: stacks concatenate their input
//! epoch         u64
//! lr_initial    f64
//! decay_every   u64
//! decay_factor  f64
//! dropout       f64
//! rng_seed      32 bytes
//! rng_stream    u64
//! rng_word_pos  u128
//! n_params      u32       then n_params tensors
//! has_velocity  u8        then n_params tensors when 1
//! n_history     u64       then n_history × (u64 epoch, 6 × f64 lr loss ce reg com acc)
//!
//! tensor:       u32 name length, UTF-8 name, u64 rows, u64 cols, rows·cols f64 row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{EpochMetrics, LrSchedule, TrainState};
use crate::error::{Error, Result};
use crate::gcn::{AggregationMode, GcnStack};
use crate::heads::HeadParams;
use crate::network::{ModelGradients, PgcnModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PGCNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME: u32 = 256;

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Array2<f64>) -> std::io::Result<()> {
    w.write_u32::<LE>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u64::<LE>(t.nrows() as u64)?;
    w.write_u64::<LE>(t.ncols() as u64)?;
    for &v in t.iter() {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn encode<W: Write>(w: &mut W, state: &TrainState) -> std::io::Result<()> {
    let model = &state.model;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    w.write_u32::<LE>(model.mode().code())?;
    w.write_u32::<LE>(u32::from(model.action_stack.concat_input))?;
    w.write_u64::<LE>(state.epoch as u64)?;
    w.write_f64::<LE>(state.schedule.initial)?;
    w.write_u64::<LE>(state.schedule.every as u64)?;
    w.write_f64::<LE>(state.schedule.factor)?;
    w.write_f64::<LE>(model.action_stack.dropout)?;
    w.write_all(&state.rng.get_seed())?;
    w.write_u64::<LE>(state.rng.get_stream())?;
    w.write_u128::<LE>(state.rng.get_word_pos())?;

    let names = model.tensor_names();
    w.write_u32::<LE>(names.len() as u32)?;
    for (name, t) in names.iter().zip(model.tensors()) {
        write_tensor(w, name, t)?;
    }
    match &state.velocity {
        Some(v) => {
            w.write_u8(1)?;
            for (name, t) in names.iter().zip(v.tensors()) {
                write_tensor(w, name, t)?;
            }
        }
        None => w.write_u8(0)?,
    }
    w.write_u64::<LE>(state.history.len() as u64)?;
    for m in &state.history {
        w.write_u64::<LE>(m.epoch as u64)?;
        for v in [m.lr, m.loss, m.cross_entropy, m.regression, m.completeness, m.accuracy] {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

/// Writes `state` to `path`, replacing any existing file.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, state)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Decoder<'a, R> {
    r: R,
    path: &'a Path,
}

impl<R: Read> Decoder<'_, R> {
    fn fail(&self, e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(self.path, "truncated checkpoint")
        } else {
            Error::io(self.path, e)
        }
    }

    fn u8(&mut self) -> Result<u8> {
        self.r.read_u8().map_err(|e| self.fail(e))
    }

    fn u32(&mut self) -> Result<u32> {
        self.r.read_u32::<LE>().map_err(|e| self.fail(e))
    }

    fn u64(&mut self) -> Result<u64> {
        self.r.read_u64::<LE>().map_err(|e| self.fail(e))
    }

    fn u128(&mut self) -> Result<u128> {
        self.r.read_u128::<LE>().map_err(|e| self.fail(e))
    }

    fn f64(&mut self) -> Result<f64> {
        self.r.read_f64::<LE>().map_err(|e| self.fail(e))
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.r.read_exact(buf).map_err(|e| self.fail(e))
    }

    fn tensor(&mut self) -> Result<(String, Array2<f64>)> {
        let len = self.u32()?;
        if len > MAX_NAME {
            return Err(Error::format(self.path, format!("tensor name length {len} too large")));
        }
        let mut name = vec![0u8; len as usize];
        self.bytes(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format(self.path, "tensor name is not UTF-8"))?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= (1 << 32))
            .ok_or_else(|| Error::format(self.path, format!("tensor {name} has implausible shape {rows}x{cols}")))?;
        let mut data = vec![0.0; count];
        self.r.read_f64_into::<LE>(&mut data).map_err(|e| self.fail(e))?;
        let t = Array2::from_shape_vec((rows, cols), data).expect("length matches shape");
        Ok((name, t))
    }
}

fn assemble_model(
    path: &Path,
    tensors: Vec<(String, Array2<f64>)>,
    mode: AggregationMode,
    concat_input: bool,
    dropout: f64,
) -> Result<PgcnModel> {
    let mut action = Vec::new();
    let mut location = Vec::new();
    let mut head: Vec<Option<Array2<f64>>> = vec![None; 6];
    const HEAD: [&str; 6] = [
        "head.action.weight",
        "head.action.bias",
        "head.completeness.weight",
        "head.completeness.bias",
        "head.regression.weight",
        "head.regression.bias",
    ];
    for (name, t) in tensors {
        if let Some(k) = name.strip_prefix("action.layer") {
            if k.parse() != Ok(action.len()) {
                return Err(Error::format(path, format!("unexpected tensor {name}")));
            }
            action.push(t);
        } else if let Some(k) = name.strip_prefix("location.layer") {
            if k.parse() != Ok(location.len()) {
                return Err(Error::format(path, format!("unexpected tensor {name}")));
            }
            location.push(t);
        } else if let Some(i) = HEAD.iter().position(|h| *h == name) {
            head[i] = Some(t);
        } else {
            return Err(Error::format(path, format!("unknown tensor {name}")));
        }
    }
    if action.is_empty() || location.is_empty() {
        return Err(Error::format(path, "checkpoint lacks stack layers"));
    }
    let mut head = head.into_iter();
    let mut take = |name: &str| {
        head.next()
            .flatten()
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
    };
    let heads = HeadParams {
        action_weight: take(HEAD[0])?,
        action_bias: take(HEAD[1])?,
        completeness_weight: take(HEAD[2])?,
        completeness_bias: take(HEAD[3])?,
        regression_weight: take(HEAD[4])?,
        regression_bias: take(HEAD[5])?,
    };
    let stack = |layers: Vec<Array2<f64>>| GcnStack {
        layers,
        dropout,
        concat_input,
        mode,
    };
    let model = PgcnModel {
        action_stack: stack(action),
        location_stack: stack(location),
        heads,
    };
    check_shapes(path, &model)?;
    Ok(model)
}

fn check_shapes(path: &Path, model: &PgcnModel) -> Result<()> {
    let chain_ok = |s: &GcnStack| s.layers.windows(2).all(|w| w[0].ncols() == w[1].nrows());
    let c = model.heads.num_classes();
    let h = &model.heads;
    let ok = chain_ok(&model.action_stack)
        && chain_ok(&model.location_stack)
        && h.action_weight.dim() == (model.action_stack.output_dim(), c + 1)
        && h.action_bias.dim() == (1, c + 1)
        && h.completeness_weight.dim() == (model.location_stack.output_dim(), c)
        && h.regression_weight.dim() == (model.location_stack.output_dim(), 2 * c)
        && h.regression_bias.dim() == (1, 2 * c);
    if ok {
        Ok(())
    } else {
        Err(Error::format(path, "inconsistent tensor shapes"))
    }
}

fn decode<R: Read>(d: &mut Decoder<'_, R>) -> Result<TrainState> {
    let path = d.path;
    let mut magic = [0u8; 8];
    d.bytes(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = d.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let code = d.u32()?;
    let mode = AggregationMode::from_code(code)
        .ok_or_else(|| Error::format(path, format!("unknown aggregation mode code {code}")))?;
    let concat_input = d.u32()? & 1 == 1;
    let epoch = d.u64()? as usize;
    let schedule = LrSchedule {
        initial: d.f64()?,
        every: d.u64()? as usize,
        factor: d.f64()?,
    };
    let dropout = d.f64()?;
    let mut seed = [0u8; 32];
    d.bytes(&mut seed)?;
    let stream = d.u64()?;
    let word_pos = d.u128()?;

    let n = d.u32()? as usize;
    let tensors = (0..n).map(|_| d.tensor()).collect::<Result<Vec<_>>>()?;
    let model = assemble_model(path, tensors, mode, concat_input, dropout)?;

    let velocity = match d.u8()? {
        0 => None,
        1 => {
            let mut v = model.zero_gradients();
            for slot in v.tensors_mut() {
                let (_, t) = d.tensor()?;
                if t.dim() != slot.dim() {
                    return Err(Error::format(path, "velocity shape differs from parameters"));
                }
                *slot = t;
            }
            Some::<ModelGradients>(v)
        }
        other => return Err(Error::format(path, format!("bad velocity flag {other}"))),
    };

    let n_hist = d.u64()?;
    let mut history = Vec::new();
    for _ in 0..n_hist {
        let epoch = d.u64()? as usize;
        let mut v = [0.0; 6];
        for x in &mut v {
            *x = d.f64()?;
        }
        history.push(EpochMetrics {
            epoch,
            lr: v[0],
            loss: v[1],
            cross_entropy: v[2],
            regression: v[3],
            completeness: v[4],
            accuracy: v[5],
        });
    }
    let mut trailing = [0u8; 1];
    if d.r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        epoch,
        schedule,
        model,
        rng,
        velocity,
        history,
    })
}

/// Reads a checkpoint written by [`save`].
pub fn restore(path: &Path) -> Result<TrainState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut d = Decoder {
        r: BufReader::new(file),
        path,
    };
    decode(&mut d)
}
