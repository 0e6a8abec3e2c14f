//! Monte Carlo engine, verification suites, file formats and command line for
//! the natural-model laboratory built on `natural-core`.

pub mod config;
pub mod export;
pub mod mc;
pub mod polarize;
pub mod regularity_suite;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tree_suite;

use std::path::PathBuf;

pub use config::RunConfig;
pub use report::{Check, SuiteReport};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Core(#[from] natural_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Threads(String),
}

impl LabError {
    /// Process exit status: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } => 2,
            LabError::Core(natural_core::Error::Config { .. }) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Reclassifies a model-construction failure as a configuration error.
    pub(crate) fn invalid_model(field: &str) -> impl FnOnce(natural_core::Error) -> LabError + '_ {
        move |e| LabError::Config {
            field: field.into(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "NATURAL_LAB_THREADS";

/// Thread pool sized from [`THREADS_ENV`] (all cores when unset or 0).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| LabError::Config {
            field: THREADS_ENV.into(),
            message: format!("expected a thread count, found `{v}`"),
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| LabError::Threads(e.to_string()))
}
