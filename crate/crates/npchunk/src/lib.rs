//! File formats, configuration, parallel training and the HTTP session
//! service around [`npchunk_core`].

pub mod config;
pub mod io;
pub mod service;
pub mod store;
pub mod trainer;

pub use npchunk_core as core;

use std::path::PathBuf;

use npchunk_core::al::AlError;
use npchunk_core::corpus::CorpusError;
use npchunk_core::cost::CostError;
use npchunk_core::dsl::DslErrors;
use npchunk_core::metrics::MetricsError;
use npchunk_core::session::SessionError;
use npchunk_core::tbl::TblError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Rules { path: PathBuf, source: DslErrors },
    #[error(transparent)]
    Tbl(#[from] TblError),
    #[error(transparent)]
    Al(#[from] AlError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Other(String),
}

impl Error {
    /// 2 for unreadable or malformed input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Corpus { .. }
            | Error::Format { .. }
            | Error::Rules { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
