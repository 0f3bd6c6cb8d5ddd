use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic in {format} container")]
    BadMagic { format: &'static str },

    #[error("{format} payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSize {
        format: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("undefined depth at {} masked pixel(s), first at {:?}", .pixels.len(), .pixels.first())]
    UndefinedDepth { pixels: Vec<(usize, usize)> },

    #[error("empty region: {0}")]
    EmptyRegion(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("non-unit normal (norm {0})")]
    NonUnitNormal(f64),

    #[error("non-finite energy at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
