//! Binary activation dump: a fixed header followed by token frames.
//!
//! All integers and scalars are little-endian.
//!
//! ```text
//! offset      size  field
//! 0           4     magic "EGTK"
//! 4           2     version (u16, currently 1)
//! 6           2     num_layers m (u16, >= 1)
//! 8           4     per_layer_dim d (u32, >= 1)
//! 12          2m    layer_ids (u16 each, strictly increasing)
//! 12+2m       1     scalar_width (0 = f32, 1 = f64)
//! 13+2m       8     token_count (u64, 0 = unknown / streaming)
//! 21+2m       ...   frames
//! ```
//!
//! Each frame is `token_index: u64` followed by `m*d` scalars of the declared
//! width, layer blocks concatenated in `layer_ids` order.

use std::io::{self, Read, Write};

use crate::error::DumpError;

pub const MAGIC: [u8; 4] = *b"EGTK";
pub const VERSION: u16 = 1;

/// Largest accepted frame width (scalars per token).
pub const MAX_FRAME_WIDTH: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarWidth {
    F32,
    F64,
}

impl ScalarWidth {
    pub fn bytes(self) -> usize {
        match self {
            ScalarWidth::F32 => 4,
            ScalarWidth::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            ScalarWidth::F32 => 0,
            ScalarWidth::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScalarWidth::F32),
            1 => Some(ScalarWidth::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub layer_ids: Vec<u16>,
    pub per_layer_dim: u32,
    pub scalar_width: ScalarWidth,
    pub token_count: u64,
}

impl StreamHeader {
    pub fn new(layer_ids: Vec<u16>, per_layer_dim: u32, scalar_width: ScalarWidth) -> Self {
        Self {
            version: VERSION,
            layer_ids,
            per_layer_dim,
            scalar_width,
            token_count: 0,
        }
    }

    pub fn with_token_count(mut self, n: u64) -> Self {
        self.token_count = n;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layer_ids.len()
    }

    /// Concatenated frame width `m*d`.
    pub fn frame_width(&self) -> usize {
        self.layer_ids.len() * self.per_layer_dim as usize
    }

    pub fn encoded_len(&self) -> usize {
        21 + 2 * self.layer_ids.len()
    }

    pub fn frame_bytes(&self) -> usize {
        8 + self.frame_width() * self.scalar_width.bytes()
    }

    pub fn validate(&self) -> Result<(), DumpError> {
        if self.version != VERSION {
            return Err(DumpError::UnsupportedVersion(self.version));
        }
        if self.layer_ids.is_empty() {
            return Err(DumpError::InvalidHeader("num_layers must be >= 1".into()));
        }
        if self.layer_ids.len() > u16::MAX as usize {
            return Err(DumpError::InvalidHeader("too many layers".into()));
        }
        if self.per_layer_dim == 0 {
            return Err(DumpError::InvalidHeader(
                "per_layer_dim must be >= 1".into(),
            ));
        }
        if self.layer_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DumpError::InvalidHeader(
                "layer_ids must be strictly increasing".into(),
            ));
        }
        match self
            .layer_ids
            .len()
            .checked_mul(self.per_layer_dim as usize)
        {
            Some(w) if w <= MAX_FRAME_WIDTH => Ok(()),
            _ => Err(DumpError::InvalidHeader(format!(
                "frame width exceeds {MAX_FRAME_WIDTH}"
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.layer_ids.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.per_layer_dim.to_le_bytes());
        for id in &self.layer_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.push(self.scalar_width.code());
        out.extend_from_slice(&self.token_count.to_le_bytes());
        out
    }

    /// Reads and validates a header.
    pub fn decode<R: Read>(src: &mut R) -> Result<Self, DumpError> {
        let mut fixed = [0u8; 12];
        read_exact_at(src, &mut fixed, 0, "header")?;
        let magic = [fixed[0], fixed[1], fixed[2], fixed[3]];
        if magic != MAGIC {
            return Err(DumpError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != VERSION {
            return Err(DumpError::UnsupportedVersion(version));
        }
        let m = u16::from_le_bytes([fixed[6], fixed[7]]) as usize;
        let d = u32::from_le_bytes([fixed[8], fixed[9], fixed[10], fixed[11]]);
        let mut rest = vec![0u8; 2 * m + 9];
        read_exact_at(src, &mut rest, 12, "header")?;
        let layer_ids = rest[..2 * m]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let code = rest[2 * m];
        let scalar_width = ScalarWidth::from_code(code)
            .ok_or_else(|| DumpError::InvalidHeader(format!("unknown scalar width code {code}")))?;
        let mut tc = [0u8; 8];
        tc.copy_from_slice(&rest[2 * m + 1..]);
        let header = StreamHeader {
            version,
            layer_ids,
            per_layer_dim: d,
            scalar_width,
            token_count: u64::from_le_bytes(tc),
        };
        header.validate()?;
        Ok(header)
    }
}

/// One token's concatenated multi-layer activation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFrame {
    pub token_index: u64,
    pub values: Vec<f64>,
}

impl ActivationFrame {
    pub fn new(token_index: u64, values: Vec<f64>) -> Self {
        Self {
            token_index,
            values,
        }
    }

    fn check(&self, width: usize) -> Result<(), DumpError> {
        if self.values.len() != width {
            return Err(DumpError::WidthMismatch {
                expected: width,
                got: self.values.len(),
            });
        }
        if let Some(column) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(DumpError::NonFinite {
                token_index: self.token_index,
                column,
            });
        }
        Ok(())
    }
}

/// Incremental dump writer. The header is emitted on construction.
///
/// f32 dumps store each value rounded to `f32`; values that overflow to
/// infinity are rejected.
pub struct StreamWriter<W: Write> {
    sink: W,
    header: StreamHeader,
    bytes: u64,
    frames: u64,
    buf: Vec<u8>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader) -> Result<Self, DumpError> {
        header.validate()?;
        let enc = header.encode();
        sink.write_all(&enc)?;
        Ok(Self {
            sink,
            bytes: enc.len() as u64,
            frames: 0,
            buf: Vec::with_capacity(header.frame_bytes()),
            header,
        })
    }

    pub fn write_frame(&mut self, frame: &ActivationFrame) -> Result<(), DumpError> {
        frame.check(self.header.frame_width())?;
        if self.header.token_count != 0 && self.frames >= self.header.token_count {
            return Err(DumpError::TokenCountMismatch {
                expected: self.header.token_count,
                got: self.frames + 1,
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&frame.token_index.to_le_bytes());
        match self.header.scalar_width {
            ScalarWidth::F32 => {
                for (column, &v) in frame.values.iter().enumerate() {
                    let x = v as f32;
                    if !x.is_finite() {
                        return Err(DumpError::NonFinite {
                            token_index: frame.token_index,
                            column,
                        });
                    }
                    self.buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            ScalarWidth::F64 => {
                for &v in &frame.values {
                    self.buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        self.sink.write_all(&self.buf)?;
        self.bytes += self.buf.len() as u64;
        self.frames += 1;
        Ok(())
    }

    /// Flushes and returns the total number of bytes written.
    pub fn finish(mut self) -> Result<u64, DumpError> {
        if self.header.token_count != 0 && self.frames != self.header.token_count {
            return Err(DumpError::TokenCountMismatch {
                expected: self.header.token_count,
                got: self.frames,
            });
        }
        self.sink.flush()?;
        Ok(self.bytes)
    }
}

/// Serializes a whole stream and returns the exact number of bytes written.
pub fn write_stream<'a, W, I>(header: &StreamHeader, frames: I, sink: W) -> Result<u64, DumpError>
where
    W: Write,
    I: IntoIterator<Item = &'a ActivationFrame>,
{
    let mut w = StreamWriter::new(sink, header.clone())?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()
}

/// Lazy frame iterator over a dump. Stops after the first error.
pub struct StreamReader<R: Read> {
    src: R,
    header: StreamHeader,
    offset: u64,
    frames: u64,
    done: bool,
    buf: Vec<u8>,
}

/// Parses the header and returns a lazy iterator over the frames.
pub fn read_stream<R: Read>(mut src: R) -> Result<StreamReader<R>, DumpError> {
    let header = StreamHeader::decode(&mut src)?;
    Ok(StreamReader {
        offset: header.encoded_len() as u64,
        src,
        header,
        frames: 0,
        done: false,
        buf: Vec::new(),
    })
}

impl<R: Read> StreamReader<R> {
    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Byte offset of the next unread frame.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn next_frame(&mut self) -> Result<Option<ActivationFrame>, DumpError> {
        let frame_bytes = self.header.frame_bytes();
        self.buf.clear();
        // `take` bounds the allocation by the bytes actually present.
        let got = (&mut self.src)
            .take(frame_bytes as u64)
            .read_to_end(&mut self.buf)?;
        if got == 0 {
            let expected = self.header.token_count;
            if expected != 0 && self.frames != expected {
                return Err(DumpError::TokenCountMismatch {
                    expected,
                    got: self.frames,
                });
            }
            return Ok(None);
        }
        if got < frame_bytes {
            return Err(DumpError::Truncated {
                offset: self.offset + got as u64,
                context: "frame",
            });
        }
        if self.header.token_count != 0 && self.frames >= self.header.token_count {
            return Err(DumpError::TokenCountMismatch {
                expected: self.header.token_count,
                got: self.frames + 1,
            });
        }
        let token_index = u64::from_le_bytes(self.buf[..8].try_into().unwrap());
        let payload = &self.buf[8..];
        let values: Vec<f64> = match self.header.scalar_width {
            ScalarWidth::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            ScalarWidth::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if let Some(column) = values.iter().position(|v| !v.is_finite()) {
            return Err(DumpError::NonFinite {
                token_index,
                column,
            });
        }
        self.offset += frame_bytes as u64;
        self.frames += 1;
        Ok(Some(ActivationFrame {
            token_index,
            values,
        }))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<ActivationFrame, DumpError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_exact_at<R: Read>(
    src: &mut R,
    buf: &mut [u8],
    base: u64,
    context: &'static str,
) -> Result<(), DumpError> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(DumpError::Truncated {
                    offset: base + filled as u64,
                    context,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
