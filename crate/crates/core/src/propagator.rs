//! Split-step propagation of the disordered nonlinear lattice.
//!
//! One step of a [`SplitScheme`] alternates kinetic substeps `A(c_i dt)`,
//! applied as a phase on each discrete-Fourier mode, with position-diagonal
//! substeps `B(d_i dt)`, which rotate every amplitude by its local energy
//! `eps_n + beta |psi_n|^p`. Both are exact flows of their parts of the
//! Hamiltonian, so every substep is unitary. The spectral kinetic step imposes
//! periodic boundaries; runs are guarded by the edge mass instead.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DisorderRealization, ModelParams, WaveFunction};
use crate::observables::{modulus_pow, tail_mass, MomentReference, ObservableRecord, TAIL_MARGIN, TAIL_THRESHOLD};

/// Relative tolerance for a time to count as a whole number of steps.
const STEP_TOLERANCE: f64 = 1e-9;

/// Coefficients of a palindromic split-step scheme,
/// `A(c_1) B(d_1) A(c_2) ... B(d_m) A(c_{m+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScheme {
    pub name: String,
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
}

impl SplitScheme {
    /// Second-order SABA member.
    pub fn saba2() -> Self {
        let c1 = (3.0 - 3f64.sqrt()) / 6.0;
        SplitScheme {
            name: "saba2".into(),
            kinetic: vec![c1, 1.0 / 3f64.sqrt(), c1],
            potential: vec![0.5, 0.5],
        }
    }

    /// Plain Strang splitting, kept as a cross-check.
    pub fn strang() -> Self {
        SplitScheme {
            name: "strang".into(),
            kinetic: vec![0.5, 0.5],
            potential: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.potential.is_empty() || self.kinetic.len() != self.potential.len() + 1 {
            return Err(Error::Config(format!(
                "scheme {}: need m potential and m + 1 kinetic coefficients, got {} and {}",
                self.name,
                self.potential.len(),
                self.kinetic.len()
            )));
        }
        for (label, coeffs) in [("kinetic", &self.kinetic), ("potential", &self.potential)] {
            let sum: f64 = coeffs.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("scheme {}: {label} coefficients sum to {sum}", self.name)));
            }
        }
        let palindrome = |v: &[f64]| v.iter().zip(v.iter().rev()).all(|(a, b)| (a - b).abs() <= 1e-15);
        if !palindrome(&self.kinetic) || !palindrome(&self.potential) {
            return Err(Error::Config(format!("scheme {} is not palindromic", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(dt: f64) -> Result<Self> {
        if dt.is_finite() && dt > 0.0 {
            Ok(StepSize(dt))
        } else {
            Err(Error::Config(format!("time step must be > 0, got {dt}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn halved(self) -> Self {
        StepSize(self.0 / 2.0)
    }

    /// Number of steps covering `t`, if `t` is a multiple of the step.
    pub fn steps_to(self, t: f64) -> Result<u64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("time {t} must be finite and >= 0")));
        }
        let k = (t / self.0).round();
        if (k * self.0 - t).abs() > STEP_TOLERANCE * t.max(self.0) {
            return Err(Error::Config(format!("time {t} is not a multiple of dt = {}", self.0)));
        }
        Ok(k as u64)
    }
}

/// Boundary guard: mass on the outermost `margin` sites must stay below `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailGuard {
    pub margin: usize,
    pub threshold: f64,
}

impl Default for TailGuard {
    fn default() -> Self {
        TailGuard {
            margin: TAIL_MARGIN,
            threshold: TAIL_THRESHOLD,
        }
    }
}

/// Observables along a run plus the state at `t_max`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<ObservableRecord>,
    pub final_state: WaveFunction,
}

#[derive(Clone, Debug)]
pub struct TimeReversal {
    /// `sum_n |psi_initial,n - psi_reversed,n|`.
    pub delta_tr: f64,
    pub reversed: WaveFunction,
}

/// Reusable integrator for one disorder realization.
///
/// Owns the FFT plans, scratch space and cached phase tables, so a single
/// instance should drive a whole run.
pub struct Propagator<'a> {
    disorder: &'a DisorderRealization,
    params: ModelParams,
    scheme: SplitScheme,
    dt: StepSize,
    guard: TailGuard,
    reference: MomentReference,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    kinetic_tables: Vec<(u64, Vec<Complex64>)>,
    potential_tables: Vec<(u64, Vec<Complex64>)>,
}

impl<'a> Propagator<'a> {
    pub fn new(
        disorder: &'a DisorderRealization,
        params: ModelParams,
        scheme: SplitScheme,
        dt: StepSize,
    ) -> Result<Self> {
        params.validate()?;
        scheme.validate()?;
        let n = disorder.size();
        if n == 0 {
            return Err(Error::EmptyLattice);
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Propagator {
            disorder,
            params,
            scheme,
            dt,
            guard: TailGuard::default(),
            reference: MomentReference::Origin,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            kinetic_tables: Vec::new(),
            potential_tables: Vec::new(),
        })
    }

    pub fn with_guard(mut self, guard: TailGuard) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_moment_reference(mut self, reference: MomentReference) -> Self {
        self.reference = reference;
        self
    }

    pub fn size(&self) -> usize {
        self.disorder.size()
    }

    fn check_size(&self, psi: &[Complex64]) -> Result<()> {
        if psi.len() != self.size() {
            return Err(Error::LatticeMismatch {
                expected: self.size(),
                found: psi.len(),
            });
        }
        Ok(())
    }

    /// Kinetic flow for time `tau`, in place.
    pub fn kinetic(&mut self, psi: &mut [Complex64], tau: f64) {
        if tau == 0.0 {
            return;
        }
        let n = psi.len();
        let key = tau.to_bits();
        let slot = match self.kinetic_tables.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                self.kinetic_tables.push((key, kinetic_phases(n, tau)));
                self.kinetic_tables.len() - 1
            }
        };
        self.forward.process_with_scratch(psi, &mut self.scratch);
        for (a, ph) in psi.iter_mut().zip(&self.kinetic_tables[slot].1) {
            *a *= ph;
        }
        self.inverse.process_with_scratch(psi, &mut self.scratch);
    }

    /// Position-diagonal flow for time `tau`, in place.
    pub fn potential(&mut self, psi: &mut [Complex64], tau: f64) {
        if tau == 0.0 {
            return;
        }
        let key = tau.to_bits();
        let slot = match self.potential_tables.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                let table = self
                    .disorder
                    .epsilons
                    .iter()
                    .map(|&e| Complex64::from_polar(1.0, -e * tau))
                    .collect();
                self.potential_tables.push((key, table));
                self.potential_tables.len() - 1
            }
        };
        let disorder_phase = &self.potential_tables[slot].1;
        let ModelParams { beta, p, .. } = self.params;
        if beta == 0.0 {
            for (a, ph) in psi.iter_mut().zip(disorder_phase) {
                *a *= ph;
            }
            return;
        }
        for (a, ph) in psi.iter_mut().zip(disorder_phase) {
            let theta = beta * modulus_pow(a.norm_sqr(), p) * tau;
            // exp(-i theta) rounds to 1 here
            if theta.abs() < 1e-20 {
                *a *= ph;
            } else {
                *a *= ph * unit_phase(theta);
            }
        }
    }

    /// Applies `steps` whole steps of signed length `dt`, merging the trailing
    /// kinetic substep of each step with the leading one of the next.
    fn advance_raw(&mut self, psi: &mut [Complex64], dt: f64, steps: u64) {
        if steps == 0 {
            return;
        }
        let kinetic = self.scheme.kinetic.clone();
        let potential = self.scheme.potential.clone();
        let m = potential.len();
        let merged = kinetic[m] + kinetic[0];
        self.kinetic(psi, kinetic[0] * dt);
        for s in 0..steps {
            for j in 0..m {
                self.potential(psi, potential[j] * dt);
                if j + 1 < m {
                    self.kinetic(psi, kinetic[j + 1] * dt);
                }
            }
            let last = if s + 1 < steps { merged } else { kinetic[m] };
            self.kinetic(psi, last * dt);
        }
    }

    /// Advances `steps` steps forward in time.
    pub fn advance(&mut self, psi: &mut WaveFunction, steps: u64) -> Result<()> {
        self.check_size(psi.amplitudes())?;
        let dt = self.dt.get();
        self.advance_raw(psi.amplitudes_mut(), dt, steps);
        Ok(())
    }

    /// Advances `steps` steps with every substep duration negated.
    pub fn retreat(&mut self, psi: &mut WaveFunction, steps: u64) -> Result<()> {
        self.check_size(psi.amplitudes())?;
        let dt = -self.dt.get();
        self.advance_raw(psi.amplitudes_mut(), dt, steps);
        Ok(())
    }

    fn record(&self, t: f64, psi: &WaveFunction) -> Result<ObservableRecord> {
        let rec = ObservableRecord::measure(t, psi, self.disorder, &self.params, self.reference)?;
        let tail = if self.guard.margin == TAIL_MARGIN {
            rec.tail_mass
        } else {
            tail_mass(psi, self.guard.margin)
        };
        if tail > self.guard.threshold {
            return Err(Error::BoundaryContamination {
                t,
                tail_mass: tail,
                threshold: self.guard.threshold,
            });
        }
        Ok(rec)
    }

    /// Integrates from `t = 0` to `t_max`, recording observables at every
    /// sample time. `t = 0` is always recorded.
    pub fn evolve(&mut self, psi0: &WaveFunction, t_max: f64, sample_times: &[f64]) -> Result<Trajectory> {
        self.check_size(psi0.amplitudes())?;
        let total = self.dt.steps_to(t_max)?;
        let mut samples: Vec<(f64, u64)> = Vec::with_capacity(sample_times.len() + 1);
        samples.push((0.0, 0));
        for &t in sample_times {
            let k = self.dt.steps_to(t)?;
            if k > total {
                return Err(Error::Config(format!("sample time {t} beyond t_max = {t_max}")));
            }
            let (prev, pk) = samples[samples.len() - 1];
            if k == 0 && samples.len() == 1 {
                continue;
            }
            if k <= pk {
                return Err(Error::Config(format!(
                    "sample times must be strictly increasing ({prev} then {t})"
                )));
            }
            samples.push((t, k));
        }

        let mut psi = psi0.clone();
        let mut records = Vec::with_capacity(samples.len());
        let mut at = 0u64;
        for (t, k) in samples {
            self.advance(&mut psi, k - at)?;
            at = k;
            records.push(self.record(t, &psi)?);
        }
        if at < total {
            self.advance(&mut psi, total - at)?;
            self.record(t_max, &psi)?;
        }
        Ok(Trajectory {
            records,
            final_state: psi,
        })
    }

    /// Integrates to `t_end` and back again with negated substeps.
    pub fn time_reverse(&mut self, psi0: &WaveFunction, t_end: f64) -> Result<TimeReversal> {
        self.check_size(psi0.amplitudes())?;
        let steps = self.dt.steps_to(t_end)?;
        let mut psi = psi0.clone();
        self.advance(&mut psi, steps)?;
        self.record(t_end, &psi)?;
        self.retreat(&mut psi, steps)?;
        let delta_tr = psi0
            .amplitudes()
            .iter()
            .zip(psi.amplitudes())
            .map(|(a, b)| (a - b).norm())
            .sum();
        Ok(TimeReversal {
            delta_tr,
            reversed: psi,
        })
    }
}

/// `exp(-i theta)`. Small angles use the Taylor series, which is accurate to
/// rounding for `|theta| < 0.1` and much cheaper than `sin_cos`.
#[inline]
fn unit_phase(theta: f64) -> Complex64 {
    if theta.abs() < 0.1 {
        let x2 = theta * theta;
        let c = 1.0
            - x2 * (1.0 / 2.0)
                * (1.0
                    - x2 * (1.0 / 12.0)
                        * (1.0 - x2 * (1.0 / 30.0) * (1.0 - x2 * (1.0 / 56.0) * (1.0 - x2 * (1.0 / 90.0) * (1.0 - x2 * (1.0 / 132.0))))));
        let s = theta
            * (1.0
                - x2 * (1.0 / 6.0)
                    * (1.0 - x2 * (1.0 / 20.0) * (1.0 - x2 * (1.0 / 42.0) * (1.0 - x2 * (1.0 / 72.0) * (1.0 - x2 * (1.0 / 110.0))))));
        Complex64::new(c, -s)
    } else {
        let (s, c) = theta.sin_cos();
        Complex64::new(c, -s)
    }
}

/// Mode phases `exp(2 i cos(2 pi m / N) tau) / N`; the `1/N` completes the
/// unnormalized inverse transform.
fn kinetic_phases(n: usize, tau: f64) -> Vec<Complex64> {
    let scale = 1.0 / n as f64;
    (0..n)
        .map(|m| {
            let k = 2.0 * PI * m as f64 / n as f64;
            Complex64::from_polar(scale, 2.0 * k.cos() * tau)
        })
        .collect()
}

/// `psi_n <- psi_n exp(-i (eps_n + beta |psi_n|^p) tau)`.
pub fn potential_phase_step(
    psi: &WaveFunction,
    disorder: &DisorderRealization,
    params: &ModelParams,
    tau: f64,
) -> Result<WaveFunction> {
    if psi.size() != disorder.size() {
        return Err(Error::LatticeMismatch {
            expected: disorder.size(),
            found: psi.size(),
        });
    }
    let mut out = psi.clone();
    let mut prop = Propagator::new(disorder, *params, SplitScheme::strang(), StepSize(1.0))?;
    prop.potential(out.amplitudes_mut(), tau);
    Ok(out)
}

/// Free hopping flow for time `tau` on a periodic ring of `psi.size()` sites.
pub fn kinetic_step(psi: &WaveFunction, tau: f64) -> WaveFunction {
    let n = psi.size();
    let mut amps = psi.amplitudes().to_vec();
    if tau != 0.0 {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        fwd.process(&mut amps);
        for (a, ph) in amps.iter_mut().zip(kinetic_phases(n, tau)) {
            *a *= ph;
        }
        inv.process(&mut amps);
    }
    WaveFunction::from_amplitudes(amps).expect("nonempty")
}

/// One full step of `scheme`.
pub fn saba_step(
    psi: &WaveFunction,
    disorder: &DisorderRealization,
    params: &ModelParams,
    scheme: &SplitScheme,
    dt: StepSize,
) -> Result<WaveFunction> {
    let mut prop = Propagator::new(disorder, *params, scheme.clone(), dt)?;
    let mut out = psi.clone();
    prop.advance(&mut out, 1)?;
    Ok(out)
}

pub fn evolve(
    psi0: &WaveFunction,
    disorder: &DisorderRealization,
    params: &ModelParams,
    scheme: &SplitScheme,
    dt: StepSize,
    t_max: f64,
    sample_times: &[f64],
) -> Result<Trajectory> {
    Propagator::new(disorder, *params, scheme.clone(), dt)?.evolve(psi0, t_max, sample_times)
}

pub fn time_reverse_run(
    psi0: &WaveFunction,
    disorder: &DisorderRealization,
    params: &ModelParams,
    scheme: &SplitScheme,
    dt: StepSize,
    t_end: f64,
) -> Result<TimeReversal> {
    Propagator::new(disorder, *params, scheme.clone(), dt)?.time_reverse(psi0, t_end)
}
