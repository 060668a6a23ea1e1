use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice must have at least one site")]
    EmptyLattice,

    #[error("lattice size {0} is even; a symmetric lattice around n = 0 needs an odd size")]
    EvenLattice(usize),

    #[error("dense oracle limited to {cap} sites, got {size}")]
    OracleSize { size: usize, cap: usize },

    #[error("lattice mismatch: expected {expected} sites, got {found}")]
    LatticeMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("boundary contamination at t = {t}: tail mass {tail_mass:.3e} exceeds {threshold:.1e}")]
    BoundaryContamination {
        t: f64,
        tail_mass: f64,
        threshold: f64,
    },

    #[error("diagnostic undefined for the zero state")]
    UndefinedDiagnostic,

    #[error("reference second moment vanishes at interior sample t = {t}")]
    DegenerateDenominator { t: f64 },

    #[error("sample grids differ: {0}")]
    GridMismatch(String),

    #[error("cannot fit log-log: m2 = {m2} at t = {t} is not positive")]
    FitDomain { t: f64, m2: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate collapse: curve beta = {beta} has no variance in alpha")]
    DegenerateCollapse { beta: f64 },

    #[error("ensemble invalid: {failed} of {total} realizations hit the boundary guard")]
    EnsembleInvalid { failed: usize, total: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
