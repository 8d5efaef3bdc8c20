use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("CFL violation: courant number {courant:.3} exceeds {limit}; use at least {substeps} sub-steps")]
    Cfl {
        courant: f64,
        limit: f64,
        substeps: usize,
    },
    #[error("pressure solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },
    #[error("no oil present (zero active volume or all-zero map)")]
    EmptySpill,
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
