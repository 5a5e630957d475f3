//! Versioned little-endian weight file.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EGTM"
//! 4       2     version (u16, currently 1)
//! 6       1     cell kind (0 = rnn, 1 = gru, 2 = lstm)
//! 7       1     reserved, 0
//! 8       4     input_dim k (u32)
//! 12      4     hidden_dim h (u32)
//! 16      4     feature layout_version (u32)
//! 20      8k    normalization means (f64)
//! 20+8k   8k    normalization stds (f64, > 0)
//! 20+16k  k     feature mask (0 or 1)
//! 20+17k  8     parameter count P (u64)
//! 28+17k  8P    parameters (f64) in flat layout order
//! ```
//!
//! The parameter blocks follow [`Layout`]: `W_in (h×k)`, `b_in (h)`,
//! `W_x (G·h×h)`, `W_h (G·h×h)`, `b_gate (G·h)`, `w_out (h)`, `b_out (1)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CellKind, Layout, Normalizer, RecurrentModel};
use crate::error::ModelError;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"EGTM";
pub const WEIGHTS_VERSION: u16 = 1;
const MAX_DIM: u32 = 1 << 16;

pub fn write_model<W: Write>(model: &RecurrentModel, mut sink: W) -> Result<(), ModelError> {
    let l = &model.layout;
    let mut out = Vec::with_capacity(28 + 17 * l.input_dim + 8 * l.total);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.push(l.cell.code());
    out.push(0);
    out.extend_from_slice(&(l.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(l.hidden_dim as u32).to_le_bytes());
    out.extend_from_slice(&model.layout_version.to_le_bytes());
    for v in model.norm.mean.iter().chain(&model.norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(model.norm.mask.iter().map(|&m| m as u8));
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ModelError::Format(format!("truncated at {what} (offset {})", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| ModelError::Format(format!("{what} too large")))?,
            what,
        )?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::Format(format!("non-finite value in {what}")));
        }
        Ok(v)
    }
}

/// Decodes a weight file from memory, validating every field.
pub fn read_model(bytes: &[u8]) -> Result<RecurrentModel, ModelError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let kind = c.take(2, "cell kind")?;
    let cell = CellKind::from_code(kind[0])
        .ok_or_else(|| ModelError::Format(format!("unknown cell kind {}", kind[0])))?;
    let k = c.u32("input_dim")?;
    let h = c.u32("hidden_dim")?;
    if k == 0 || h == 0 || k > MAX_DIM || h > MAX_DIM {
        return Err(ModelError::Format(format!("bad dimensions k={k} h={h}")));
    }
    let (k, h) = (k as usize, h as usize);
    let layout_version = c.u32("layout_version")?;
    let mean = c.f64s(k, "means")?;
    let std = c.f64s(k, "stds")?;
    if std.iter().any(|&s| s <= 0.0) {
        return Err(ModelError::Format(
            "normalization std must be positive".into(),
        ));
    }
    let mask = c
        .take(k, "mask")?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(ModelError::Format(format!("mask byte {other}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let layout = Layout::new(cell, k, h);
    let count = u64::from_le_bytes(c.take(8, "parameter count")?.try_into().unwrap());
    if count != layout.total as u64 {
        return Err(ModelError::Format(format!(
            "parameter count {count} does not match layout ({})",
            layout.total
        )));
    }
    let params = c.f64s(layout.total, "parameters")?;
    if c.pos != bytes.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(RecurrentModel {
        layout,
        params,
        norm: Normalizer { mean, std, mask },
        layout_version,
    })
}

pub fn save_model(model: &RecurrentModel, path: &Path) -> Result<(), ModelError> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<RecurrentModel, ModelError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_model(&bytes)
}
