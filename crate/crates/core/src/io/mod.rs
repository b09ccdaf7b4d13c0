//! File formats: tensors, PGM masks, record manifests and run configs.

mod manifest;
mod pgm;
mod runconfig;
mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{read_manifest, write_manifest, ManifestRecord, RecordKind, RecordManifest, MANIFEST_FILE};
pub use pgm::{decode_mask_pgm, encode_mask_pgm, read_mask_pgm, write_mask_pgm};
pub use runconfig::{apply_setting, parse_run_config, parse_run_config_onto, read_run_config, render_run_config};
pub use tensor::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, Tensor, DTYPE_F32, TENSOR_MAGIC,
    TENSOR_VERSION,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"EYIT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(usize),
    #[error("tensor dimensions {0:?} overflow")]
    DimOverflow(Vec<u64>),
    #[error("tensor dims {dims:?} need {expected} values, got {found}")]
    ValueCount {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("tensor rank {0} exceeds 255")]
    RankTooLarge(usize),
    #[error("refusing to write non-finite value at index {0}")]
    NonFinite(usize),
    #[error("not a binary PGM (P5) file: {0}")]
    PgmFormat(String),
    #[error("PGM pixel value {value} at index {index} is neither 0 nor 255")]
    PgmValue { index: usize, value: u8 },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }
}
