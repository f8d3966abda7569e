//! File formats, pipeline orchestration, and CLI plumbing around
//! [`toothbox_core`].
//!
//! The core crate holds the algorithms; this one owns everything that
//! touches the filesystem: the `CBCTVOL1` volume container, JSON ground
//! truth and configuration, JSON-lines detections, boxes/report output,
//! PGM slice export, and the end-to-end pipeline runner the `toothbox`
//! binary drives.
//!
//! Running a synthetic scan in memory:
//!
//! ```
//! use toothbox::config::PipelineConfig;
//! use toothbox::pipeline::{run_scan, DetectionsSource};
//! use toothbox_core::phantom::{generate_phantom, PhantomSpec};
//!
//! let spec = PhantomSpec::arches(4, 4, 3.0, 1);
//! let (volume, truth) = generate_phantom(&spec)?;
//! let scan = run_scan(
//!     &volume,
//!     DetectionsSource::Synthetic(&truth),
//!     Some(&truth),
//!     &PipelineConfig::default(),
//! )?;
//! assert_eq!(scan.boxes.len(), truth.teeth.len());
//! # Ok::<(), anyhow::Error>(())
//! ```

pub mod boxes_io;
pub mod config;
pub mod detections_io;
pub mod pgm;
pub mod pipeline;
pub mod volume_io;

pub use toothbox_core as core;

use std::path::PathBuf;

/// Errors for everything file-shaped.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad magic, expected \"CBCTVOL1\"", path.display())]
    BadMagic { path: PathBuf },
    #[error("{}: truncated payload: expected {expected} bytes, found {found}", path.display())]
    Truncated { path: PathBuf, expected: u64, found: u64 },
    #[error("{}: invalid {field}: {message}", path.display())]
    BadField { path: PathBuf, field: &'static str, message: String },
    #[error("{}:{line}: {message}", path.display())]
    BadLine { path: PathBuf, line: usize, message: String },
    #[error("{}: malformed JSON", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] toothbox_core::CoreError),
}

impl IoError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
