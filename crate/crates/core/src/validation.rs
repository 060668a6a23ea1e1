//! Reliability checks: time reversal (t1), step halving on one realization
//! (t2) and step halving on the ensemble average (t3).

use serde::{Deserialize, Serialize};

use crate::config::{sample_grid, SimulationConfig};
use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::model::{initial_wavepacket, make_disorder};
use crate::propagator::{Propagator, StepSize};

pub const REVERSAL_THRESHOLD: f64 = 0.1;
pub const STEP_HALVING_THRESHOLD: f64 = 0.01;

const QUADRATURE_NOTE: &str =
    "trapezoid in t over the sample grid, t > 0 only, normalized by the integration span";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    T1,
    T2,
    T3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: Criterion,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Horizon of the check.
    pub horizon: f64,
    pub config: SimulationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    pub method: String,
}

impl CriterionReport {
    fn new(criterion: Criterion, value: f64, threshold: f64, horizon: f64, config: SimulationConfig) -> Self {
        CriterionReport {
            criterion,
            value,
            threshold,
            passed: value < threshold,
            horizon,
            config,
            seed: None,
            realizations: None,
            method: String::new(),
        }
    }
}

/// Time-averaged relative deviation `(1/T) ∫ |(a - b) / b| dt` of a coarse
/// series `a` from a reference `b` sampled on the same grid.
///
/// Samples at `t = 0` are skipped since the second moment vanishes there.
pub fn relative_m2_deviation(times: &[f64], coarse: &[f64], fine: &[f64]) -> Result<f64> {
    if times.len() != coarse.len() || times.len() != fine.len() {
        return Err(Error::GridMismatch(format!(
            "{} times, {} coarse values, {} reference values",
            times.len(),
            coarse.len(),
            fine.len()
        )));
    }
    let mut points = Vec::with_capacity(times.len());
    for ((&t, &a), &b) in times.iter().zip(coarse).zip(fine) {
        if t <= 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::DegenerateDenominator { t });
        }
        points.push((t, ((a - b) / b).abs()));
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need two samples after t = 0, have {}",
            points.len()
        )));
    }
    let integral: f64 = points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let span = points[points.len() - 1].0 - points[0].0;
    Ok(integral / span)
}

fn checked_horizon(config: &SimulationConfig, horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon <= config.t_max * (1.0 + 1e-12)) {
        return Err(Error::Config(format!(
            "check horizon {horizon} must lie in (0, t_max = {}]",
            config.t_max
        )));
    }
    Ok(())
}

/// Runs forward to `horizon` and back; passes when `delta_tr < 0.1`.
pub fn check_t1(config: &SimulationConfig, seed: u64, horizon: f64) -> Result<CriterionReport> {
    config.validate()?;
    checked_horizon(config, horizon)?;
    let resolved = config.resolved();
    let disorder = make_disorder(seed, config.size(), config.width)?;
    let psi0 = initial_wavepacket(config.size())?;
    let mut prop = Propagator::new(&disorder, config.params()?, config.scheme(), config.step_size()?)?;
    let rev = prop.time_reverse(&psi0, horizon)?;
    let mut report = CriterionReport::new(Criterion::T1, rev.delta_tr, REVERSAL_THRESHOLD, horizon, resolved);
    report.seed = Some(seed);
    report.method = "sum over sites of |psi_initial - psi_reversed|, substeps negated on the way back".into();
    Ok(report)
}

fn second_moment_run(config: &SimulationConfig, seed: u64, dt: StepSize, horizon: f64, times: &[f64]) -> Result<Vec<f64>> {
    let disorder = make_disorder(seed, config.size(), config.width)?;
    let psi0 = initial_wavepacket(config.size())?;
    let traj = Propagator::new(&disorder, config.params()?, config.scheme(), dt)?
        .with_moment_reference(config.moment_reference)
        .evolve(&psi0, horizon, times)?;
    Ok(traj.records.iter().map(|r| r.m2).collect())
}

/// Compares one realization at `dt` against the same disorder at `dt / 2`.
pub fn check_t2(config: &SimulationConfig, seed: u64, horizon: f64) -> Result<CriterionReport> {
    config.validate()?;
    checked_horizon(config, horizon)?;
    let resolved = config.resolved();
    let dt = config.step_size()?;
    let times = sample_grid(dt.get(), horizon, config.grid_points)?;
    let (coarse, fine) = rayon::join(
        || second_moment_run(config, seed, dt, horizon, &times),
        || second_moment_run(config, seed, dt.halved(), horizon, &times),
    );
    let value = relative_m2_deviation(&times, &coarse?, &fine?)?;
    let mut report = CriterionReport::new(Criterion::T2, value, STEP_HALVING_THRESHOLD, horizon, resolved);
    report.seed = Some(seed);
    report.method = QUADRATURE_NOTE.into();
    Ok(report)
}

/// Step-halving comparison of two ensemble averages, `coarse` at `dt` and
/// `fine` at `dt / 2`, over identical grids and realization counts.
pub fn check_t3(coarse: &EnsembleResult, fine: &EnsembleResult) -> Result<CriterionReport> {
    if coarse.times != fine.times {
        return Err(Error::GridMismatch("ensemble sample times differ".into()));
    }
    if coarse.completed != fine.completed {
        return Err(Error::GridMismatch(format!(
            "realization counts differ: {} vs {}",
            coarse.completed, fine.completed
        )));
    }
    let value = relative_m2_deviation(&coarse.times, &coarse.mean_m2, &fine.mean_m2)?;
    let horizon = coarse.times.last().copied().unwrap_or(0.0);
    let mut report = CriterionReport::new(
        Criterion::T3,
        value,
        STEP_HALVING_THRESHOLD,
        horizon,
        coarse.meta.config.clone(),
    );
    report.seed = Some(coarse.meta.base_seed);
    report.realizations = Some(coarse.completed);
    report.method = QUADRATURE_NOTE.into();
    Ok(report)
}
