//! Benchmark harness behind the `overparam` binary: key=value experiment
//! configs, solver suites with CSV traces and SVG plots, phase-transition
//! sweeps and image reconstructions.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod solvers;
pub mod svg;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("invalid problem: {0}")]
    Problem(overparam::Error),
}

impl BenchError {
    pub fn io(path: &Path, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source: source.into(),
        }
    }
}
