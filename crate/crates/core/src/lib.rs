//! Wavepacket spreading in the one-dimensional disordered lattice with a
//! power-law nonlinearity,
//!
//! ```text
//! i dpsi_n/dt = -psi_{n+1} - psi_{n-1} + eps_n psi_n + beta |psi_n|^p psi_n
//! ```
//!
//! with `eps_n` uniform in `[-W/2, W/2]`. The crate integrates single
//! realizations with a split-step scheme, averages the second moment over
//! disorder ensembles, checks numerical reliability by time reversal and step
//! halving, and fits the spreading exponent of `<m2(t)> = D t^alpha`.

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod observables;
pub mod propagator;
pub mod validation;

pub use config::SimulationConfig;
pub use error::{Error, Result};
pub use model::{DisorderRealization, LatticeIndex, ModelParams, WaveFunction};
pub use propagator::{Propagator, SplitScheme, StepSize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
