use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the extraction and matching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("kernel side {kernel} exceeds image {width}x{height}")]
    KernelTooLarge {
        kernel: usize,
        width: usize,
        height: usize,
    },

    #[error("mask at ({x:.1}, {y:.1}) has no coverage on layer {layer}")]
    Coverage { x: f64, y: f64, layer: usize },

    #[error("feature vector shape mismatch: {a_rfs}x{a_orients} vs {b_rfs}x{b_orients}")]
    Shape {
        a_rfs: usize,
        a_orients: usize,
        b_rfs: usize,
        b_orients: usize,
    },

    #[error("template format version {found} not supported (writer version {expected})")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch in template section `{section}`")]
    Checksum { section: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
