//! `.meta.jsonl` sidecars: one JSON object per line, paired with a dump by
//! filename stem (`seq-0001.bin` <-> `seq-0001.meta.jsonl`).

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::DumpError;

pub const META_SUFFIX: &str = ".meta.jsonl";
pub const DUMP_SUFFIX: &str = ".bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    InDistribution,
    Anomalous,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::InDistribution => 0.0,
            Label::Anomalous => 1.0,
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::InDistribution),
            1 => Ok(Label::Anomalous),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::InDistribution => 0,
            Label::Anomalous => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamMeta {
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_token: Option<u64>,
    #[serde(default)]
    pub source: String,
}

impl StreamMeta {
    pub fn validate(&self) -> Result<(), DumpError> {
        if self.onset_token.is_some() && self.label != Some(Label::Anomalous) {
            return Err(DumpError::InvalidMeta(format!(
                "{}: onset_token requires label 1",
                self.sequence_id
            )));
        }
        Ok(())
    }
}

/// Parses JSON-lines metadata. Blank lines are skipped.
pub fn parse_meta_lines(text: &str) -> Result<Vec<StreamMeta>, DumpError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let meta: StreamMeta = serde_json::from_str(line)
            .map_err(|e| DumpError::InvalidMeta(format!("line {}: {e}", lineno + 1)))?;
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

pub fn read_meta_lines<R: BufRead>(mut src: R) -> Result<Vec<StreamMeta>, DumpError> {
    let mut text = String::new();
    src.read_to_string(&mut text)?;
    parse_meta_lines(&text)
}

pub fn write_meta_lines<W: Write>(metas: &[StreamMeta], mut sink: W) -> Result<(), DumpError> {
    for m in metas {
        m.validate()?;
        let line = serde_json::to_string(m).map_err(|e| DumpError::InvalidMeta(e.to_string()))?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Filename stem shared by a dump and its sidecar.
pub fn stem_of(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(META_SUFFIX)
        .or_else(|| name.strip_suffix(DUMP_SUFFIX))
        .or_else(|| path.file_stem().and_then(|s| s.to_str()))
        .map(str::to_owned)
}

/// Sidecar path for a dump path.
pub fn meta_path_for(dump: &Path) -> PathBuf {
    let stem = stem_of(dump).unwrap_or_default();
    dump.with_file_name(format!("{stem}{META_SUFFIX}"))
}

/// Reads the single-record sidecar paired with `dump`, if it exists.
pub fn load_sidecar(dump: &Path) -> Result<Option<StreamMeta>, DumpError> {
    let path = meta_path_for(dump);
    if !path.exists() {
        return Ok(None);
    }
    let metas = parse_meta_lines(&fs::read_to_string(&path)?)?;
    match metas.len() {
        1 => Ok(metas.into_iter().next()),
        n => Err(DumpError::InvalidMeta(format!(
            "{}: expected one record, found {n}",
            path.display()
        ))),
    }
}
