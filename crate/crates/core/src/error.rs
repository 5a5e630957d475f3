use std::io;

use thiserror::Error;

/// Errors raised while decoding or encoding activation dumps and sidecars.
#[derive(Debug, Error)]
pub enum DumpError {
    #[error("bad magic {0:?}, expected \"EGTK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("frame width {got} does not match header width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite scalar at token {token_index}, column {column}")]
    NonFinite { token_index: u64, column: usize },
    #[error("stream truncated at byte offset {offset} ({context})")]
    Truncated { offset: u64, context: &'static str },
    #[error("frame count {got} does not match header token_count {expected}")]
    TokenCountMismatch { expected: u64, got: u64 },
    #[error("invalid metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid feature csv at line {line}: {reason}")]
    InvalidCsv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors from the spectral and random-matrix computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("spectrum is empty")]
    EmptySpectrum,
    #[error("spectrum is identically zero")]
    ZeroSpectrum,
    #[error("eigenvalue index pair ({0}, {1}) out of range")]
    IndexOutOfRange(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("window buffer is empty")]
    EmptyWindow,
}

/// Errors from the recurrent classifier and its weight files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input at step {step}")]
    NonFinite { step: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors from metrics and the analysis protocols.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Errors from parsing and validating a run configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
