//! Scalar diagnostics recorded along a trajectory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::model::{DisorderRealization, LatticeIndex, ModelParams, WaveFunction};

/// Sites on each edge watched by the boundary guard.
pub const TAIL_MARGIN: usize = 16;
/// Largest tolerated edge mass before a run is declared contaminated.
pub const TAIL_THRESHOLD: f64 = 1e-8;

/// `|psi|^p` from `|psi|^2`, with `|psi|^0 = 1`.
#[inline]
pub(crate) fn modulus_pow(norm_sqr: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 2.0 {
        norm_sqr
    } else if p == 4.0 {
        norm_sqr * norm_sqr
    } else if p == 1.0 {
        norm_sqr.sqrt()
    } else if p == 0.5 {
        norm_sqr.sqrt().sqrt()
    } else if p == 0.25 {
        norm_sqr.sqrt().sqrt().sqrt()
    } else if p == 1.5 {
        let r = norm_sqr.sqrt();
        r * r.sqrt()
    } else if p == 3.0 {
        norm_sqr * norm_sqr.sqrt()
    } else if p == 8.0 {
        let r2 = norm_sqr * norm_sqr;
        r2 * r2
    } else {
        norm_sqr.powf(0.5 * p)
    }
}

pub fn norm(psi: &WaveFunction) -> f64 {
    psi.amplitudes().iter().map(|a| a.norm_sqr()).sum()
}

/// `sum n^2 |psi_n|^2` about the launch site `n = 0`.
pub fn second_moment(psi: &WaveFunction) -> f64 {
    psi.sites()
        .map(|(LatticeIndex(n), a)| (n * n) as f64 * a.norm_sqr())
        .sum()
}

/// Second moment about the instantaneous centroid `sum n |psi_n|^2 / norm`.
pub fn centroid_second_moment(psi: &WaveFunction) -> f64 {
    let total = norm(psi);
    if total == 0.0 {
        return 0.0;
    }
    let centroid = psi
        .sites()
        .map(|(LatticeIndex(n), a)| n as f64 * a.norm_sqr())
        .sum::<f64>()
        / total;
    psi.sites()
        .map(|(LatticeIndex(n), a)| (n as f64 - centroid).powi(2) * a.norm_sqr())
        .sum()
}

/// Conserved energy of the lattice equation with periodic neighbours:
/// `sum -2 Re(psi*_{n+1} psi_n) + eps_n |psi_n|^2 + 2 beta/(p+2) |psi_n|^(p+2)`.
pub fn energy(psi: &WaveFunction, disorder: &DisorderRealization, params: &ModelParams) -> Result<f64> {
    let n = psi.size();
    if disorder.size() != n {
        return Err(Error::LatticeMismatch {
            expected: n,
            found: disorder.size(),
        });
    }
    if params.p <= -2.0 {
        return Err(Error::Config(format!("energy undefined for p = {}", params.p)));
    }
    let amps = psi.amplitudes();
    let coupling = 2.0 * params.beta / (params.p + 2.0);
    let mut e = 0.0;
    for i in 0..n {
        let a = amps[i];
        let next = amps[(i + 1) % n];
        let rho = a.norm_sqr();
        e += -2.0 * (next.conj() * a).re
            + disorder.epsilons[i] * rho
            + coupling * rho * modulus_pow(rho, params.p);
    }
    Ok(e)
}

/// `(sum |psi|^2)^2 / sum |psi|^4`, the effective number of occupied sites.
pub fn participation_number(psi: &WaveFunction) -> Result<f64> {
    let (s2, s4) = psi.amplitudes().iter().fold((0.0, 0.0), |(s2, s4), a| {
        let r = a.norm_sqr();
        (s2 + r, s4 + r * r)
    });
    if s4 == 0.0 {
        return Err(Error::UndefinedDiagnostic);
    }
    Ok(s2 * s2 / s4)
}

/// Mass on the `margin` outermost sites of each edge.
pub fn tail_mass(psi: &WaveFunction, margin: usize) -> f64 {
    let n = psi.size();
    psi.amplitudes()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i < margin || i + margin >= n)
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentReference {
    /// Measured about the launch site.
    #[default]
    Origin,
    Centroid,
}

impl MomentReference {
    pub fn second_moment(self, psi: &WaveFunction) -> f64 {
        match self {
            MomentReference::Origin => second_moment(psi),
            MomentReference::Centroid => centroid_second_moment(psi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub m2: f64,
    pub norm: f64,
    pub energy: f64,
    pub participation: f64,
    pub tail_mass: f64,
}

impl ObservableRecord {
    pub fn measure(
        t: f64,
        psi: &WaveFunction,
        disorder: &DisorderRealization,
        params: &ModelParams,
        reference: MomentReference,
    ) -> Result<Self> {
        Ok(ObservableRecord {
            t,
            m2: reference.second_moment(psi),
            norm: norm(psi),
            energy: energy(psi, disorder, params)?,
            participation: participation_number(psi)?,
            tail_mass: tail_mass(psi, TAIL_MARGIN),
        })
    }
}

/// Provenance attached to every single-run series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: SimulationConfig,
    pub seed: u64,
    pub scheme: String,
    pub boundary: String,
    pub tail_margin: usize,
    pub tail_threshold: f64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub meta: RunMeta,
    pub records: Vec<ObservableRecord>,
}

pub const SERIES_CSV_HEADER: [&str; 6] = ["t", "m2", "norm", "energy", "participation", "tail_mass"];

impl MomentSeries {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn m2(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.m2).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SERIES_CSV_HEADER)?;
        for r in &self.records {
            w.write_record(
                [r.t, r.m2, r.norm, r.energy, r.participation, r.tail_mass].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Reads the record rows of a series CSV written by [`MomentSeries::write_csv`].
pub fn read_series_csv<R: Read>(input: R) -> Result<Vec<ObservableRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{initial_wavepacket, make_disorder};
    use num_complex::Complex64;

    fn state(size: usize, sites: &[(i64, Complex64)]) -> WaveFunction {
        let mut psi = WaveFunction::zeros(size).unwrap();
        for &(n, a) in sites {
            let i = LatticeIndex(n).storage(size).unwrap();
            psi.amplitudes_mut()[i] = a;
        }
        psi
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn norm_cases() {
        let delta = initial_wavepacket(9).unwrap();
        assert_eq!(norm(&delta), 1.0);
        let doubled = state(9, &[(0, c(2.0))]);
        assert_eq!(norm(&doubled), 4.0);
        assert_eq!(norm(&WaveFunction::zeros(9).unwrap()), 0.0);
    }

    #[test]
    fn second_moment_cases() {
        assert_eq!(second_moment(&initial_wavepacket(9).unwrap()), 0.0);
        let h = 0.5f64.sqrt();
        let pm1 = state(9, &[(-1, c(h)), (1, c(h))]);
        assert!((second_moment(&pm1) - 1.0).abs() < 1e-15);
        let pm3 = state(9, &[(-3, c(h)), (3, Complex64::new(0.0, h))]);
        assert!((second_moment(&pm3) - 9.0).abs() < 1e-14);
    }

    #[test]
    fn centroid_moment_removes_offset() {
        let shifted = state(11, &[(3, c(1.0))]);
        assert_eq!(second_moment(&shifted), 9.0);
        assert_eq!(centroid_second_moment(&shifted), 0.0);
        assert_eq!(MomentReference::Centroid.second_moment(&shifted), 0.0);
    }

    #[test]
    fn energy_of_single_site() {
        let psi = initial_wavepacket(7).unwrap();
        let d = make_disorder(1, 7, 0.0).unwrap();
        for (beta, p) in [(1.0, 2.0), (0.5, 0.0), (2.0, 4.0), (1.0, 1.5)] {
            let params = ModelParams::new(beta, p, 0.0).unwrap();
            let e = energy(&psi, &d, &params).unwrap();
            assert!((e - 2.0 * beta / (p + 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_phase_invariant_and_size_checked() {
        let d = make_disorder(5, 9, 4.0).unwrap();
        let params = ModelParams::new(1.0, 2.0, 4.0).unwrap();
        let psi = state(9, &[(-1, Complex64::new(0.3, 0.4)), (0, c(0.6)), (2, Complex64::new(0.0, -0.5))]);
        let rot = Complex64::from_polar(1.0, 0.77);
        let rotated = WaveFunction::from_amplitudes(psi.amplitudes().iter().map(|a| a * rot).collect()).unwrap();
        let e0 = energy(&psi, &d, &params).unwrap();
        let e1 = energy(&rotated, &d, &params).unwrap();
        assert!((e0 - e1).abs() < 1e-14);
        let small = make_disorder(5, 7, 4.0).unwrap();
        assert!(matches!(energy(&psi, &small, &params), Err(Error::LatticeMismatch { .. })));
    }

    #[test]
    fn participation_cases() {
        assert_eq!(participation_number(&initial_wavepacket(5).unwrap()).unwrap(), 1.0);
        let n = 12;
        let uniform = WaveFunction::from_amplitudes(vec![c(1.0 / (n as f64).sqrt()); n]).unwrap();
        assert!((participation_number(&uniform).unwrap() - n as f64).abs() < 1e-12);
        let two = state(5, &[(0, c(0.5f64.sqrt())), (1, c(0.5f64.sqrt()))]);
        assert!((participation_number(&two).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(
            participation_number(&WaveFunction::zeros(3).unwrap()),
            Err(Error::UndefinedDiagnostic)
        ));
    }

    #[test]
    fn tail_mass_cases() {
        assert_eq!(tail_mass(&initial_wavepacket(101).unwrap(), TAIL_MARGIN), 0.0);
        let n = 100;
        let uniform = WaveFunction::from_amplitudes(vec![c(1.0 / (n as f64).sqrt()); n]).unwrap();
        assert!((tail_mass(&uniform, 7) - 14.0 / 100.0).abs() < 1e-14);
        let left = state(41, &[(-20, c(0.6)), (-18, c(0.8))]);
        assert!((tail_mass(&left, 5) - norm(&left)).abs() < 1e-15);
    }

    #[test]
    fn modulus_pow_convention() {
        assert_eq!(modulus_pow(0.0, 0.0), 1.0);
        assert_eq!(modulus_pow(0.25, 2.0), 0.25);
        assert!((modulus_pow(0.25, 1.0) - 0.5).abs() < 1e-16);
        for rho in [1e-30, 0.003, 0.2, 0.9] {
            for p in [1.0, 4.0, 0.5, 1.5, 0.25, 3.0, 8.0, 2.5] {
                assert!((modulus_pow(rho, p) / rho.powf(p / 2.0) - 1.0).abs() < 1e-14);
            }
        }
    }
}
