//! Lattice state, on-site disorder and the dense linear Hamiltonian.
//!
//! Sites carry signed labels `n` on the symmetric lattice `[-L, L]`; the
//! amplitude of site `n` lives at storage index `n + size / 2`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest lattice accepted by the dense Hamiltonian.
pub const ORACLE_SIZE_CAP: usize = 64;

/// Signed site label `n`, with `n = 0` at the lattice center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatticeIndex(pub i64);

impl LatticeIndex {
    pub fn from_storage(index: usize, size: usize) -> Self {
        LatticeIndex(index as i64 - (size / 2) as i64)
    }

    /// Storage position on a lattice of `size` sites, if the label fits.
    pub fn storage(self, size: usize) -> Option<usize> {
        let idx = self.0 + (size / 2) as i64;
        (0..size as i64).contains(&idx).then_some(idx as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveFunction {
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::EmptyLattice);
        }
        Ok(WaveFunction { amplitudes })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::from_amplitudes(vec![Complex64::new(0.0, 0.0); size])
    }

    pub fn size(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn at(&self, site: LatticeIndex) -> Option<Complex64> {
        site.storage(self.size()).map(|i| self.amplitudes[i])
    }

    /// Iterates `(n, psi_n)` pairs in storage order.
    pub fn sites(&self) -> impl Iterator<Item = (LatticeIndex, Complex64)> + '_ {
        let size = self.size();
        self.amplitudes
            .iter()
            .enumerate()
            .map(move |(i, &a)| (LatticeIndex::from_storage(i, size), a))
    }
}

/// Frozen on-site energies of one disorder sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub epsilons: Vec<f64>,
    pub width: f64,
    pub seed: u64,
}

impl DisorderRealization {
    pub fn size(&self) -> usize {
        self.epsilons.len()
    }

    /// Two-column text table `(n, eps_n)` preceded by a comment line with the
    /// generating seed and width.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# seed={} W={} size={}", self.seed, self.width, self.size())?;
        let size = self.size();
        for (i, eps) in self.epsilons.iter().enumerate() {
            writeln!(out, "{} {:.17e}", LatticeIndex::from_storage(i, size).0, eps)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub p: f64,
    #[serde(rename = "W")]
    pub width: f64,
}

impl ModelParams {
    pub fn new(beta: f64, p: f64, width: f64) -> Result<Self> {
        let params = ModelParams { beta, p, width };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("p", self.p), ("W", self.width)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        self.beta == 0.0
    }
}

/// I.i.d. uniform on-site energies in `[-W/2, W/2]`, a pure function of
/// `(seed, size, width)`.
pub fn make_disorder(seed: u64, size: usize, width: f64) -> Result<DisorderRealization> {
    if size == 0 {
        return Err(Error::EmptyLattice);
    }
    if !(width.is_finite() && width >= 0.0) {
        return Err(Error::Config(format!("disorder width must be >= 0, got {width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epsilons = (0..size)
        .map(|_| width * (rng.gen::<f64>() - 0.5))
        .collect();
    Ok(DisorderRealization {
        epsilons,
        width,
        seed,
    })
}

/// All norm on the center site `n = 0`.
pub fn initial_wavepacket(size: usize) -> Result<WaveFunction> {
    if size == 0 {
        return Err(Error::EmptyLattice);
    }
    if size.is_multiple_of(2) {
        return Err(Error::EvenLattice(size));
    }
    let mut psi = WaveFunction::zeros(size)?;
    psi.amplitudes[size / 2] = Complex64::new(1.0, 0.0);
    Ok(psi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Dense tridiagonal Hamiltonian of the linear chain with open boundaries.
pub fn linear_hamiltonian(disorder: &DisorderRealization) -> Result<DMatrix<f64>> {
    hamiltonian_with_boundary(disorder, Boundary::Open)
}

/// Dense linear Hamiltonian: `eps_n` on the diagonal, `-1` between neighbours.
/// Periodic wrap entries add to existing ones, so a two-site ring has `-2`
/// off the diagonal.
pub fn hamiltonian_with_boundary(
    disorder: &DisorderRealization,
    boundary: Boundary,
) -> Result<DMatrix<f64>> {
    let n = disorder.size();
    if n == 0 {
        return Err(Error::EmptyLattice);
    }
    if n > ORACLE_SIZE_CAP {
        return Err(Error::OracleSize {
            size: n,
            cap: ORACLE_SIZE_CAP,
        });
    }
    let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&disorder.epsilons));
    for i in 0..n.saturating_sub(1) {
        h[(i, i + 1)] -= 1.0;
        h[(i + 1, i)] -= 1.0;
    }
    if boundary == Boundary::Periodic && n > 1 {
        h[(0, n - 1)] -= 1.0;
        h[(n - 1, 0)] -= 1.0;
    }
    Ok(h)
}
