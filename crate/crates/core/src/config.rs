//! Simulation configuration, β-keyed step defaults and the sample grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::observables::MomentReference;
use crate::propagator::{SplitScheme, StepSize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Saba2,
    Strang,
}

impl SchemeName {
    pub fn scheme(self) -> SplitScheme {
        match self {
            SchemeName::Saba2 => SplitScheme::saba2(),
            SchemeName::Strang => SplitScheme::strang(),
        }
    }
}

impl std::str::FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "saba2" => Ok(SchemeName::Saba2),
            "strang" => Ok(SchemeName::Strang),
            other => Err(Error::Config(format!("unknown scheme '{other}' (saba2, strang)"))),
        }
    }
}

/// Default step for a given nonlinearity strength.
#[derive(Clone, Debug, PartialEq)]
pub struct DefaultStep {
    pub dt: f64,
    pub warning: Option<String>,
}

pub fn default_step(beta: f64) -> DefaultStep {
    let dt = if beta <= 0.25 {
        0.1
    } else if beta <= 0.5 {
        0.02
    } else if beta <= 0.75 {
        0.01
    } else if beta <= 1.0 {
        0.00025
    } else {
        0.1
    };
    let warning = (beta > 1.0).then(|| {
        format!("beta = {beta}: dt = 0.1 is known not to satisfy the time-reversal and step-halving criteria")
    });
    DefaultStep { dt, warning }
}

/// Fully resolvable description of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub beta: f64,
    pub p: f64,
    #[serde(rename = "W")]
    pub width: f64,
    /// `None` selects the β-keyed default.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Lattice spans `[-L, L]`.
    #[serde(rename = "L")]
    pub half_width: usize,
    pub scheme: SchemeName,
    /// Geometric points between `t = 1` and `t_max`, in addition to `t = 0`.
    pub grid_points: usize,
    /// Sample times are snapped to multiples of this; defaults to `dt`.
    pub grid_snap: Option<f64>,
    pub seed: u64,
    pub moment_reference: MomentReference,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            beta: 1.0,
            p: 2.0,
            width: 4.0,
            dt: None,
            t_max: 1000.0,
            half_width: 512,
            scheme: SchemeName::Saba2,
            grid_points: 200,
            grid_snap: None,
            seed: 1,
            moment_reference: MomentReference::Origin,
        }
    }
}

impl SimulationConfig {
    pub fn size(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.beta, self.p, self.width)
    }

    pub fn scheme(&self) -> SplitScheme {
        self.scheme.scheme()
    }

    pub fn step_size(&self) -> Result<StepSize> {
        StepSize::new(self.dt.unwrap_or_else(|| default_step(self.beta).dt))
    }

    /// Warnings attached to the resolved configuration.
    pub fn warnings(&self) -> Vec<String> {
        match self.dt {
            None => default_step(self.beta).warning.into_iter().collect(),
            Some(_) => Vec::new(),
        }
    }

    /// Copy with every defaulted field filled in.
    pub fn resolved(&self) -> SimulationConfig {
        let mut out = self.clone();
        let dt = self.dt.unwrap_or_else(|| default_step(self.beta).dt);
        out.dt = Some(dt);
        out.grid_snap = Some(self.grid_snap.unwrap_or(dt));
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.step_size()?;
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Config(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if self.half_width == 0 {
            return Err(Error::Config("L must be >= 1".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be >= 2".into()));
        }
        if let Some(snap) = self.grid_snap {
            if !(snap.is_finite() && snap > 0.0) {
                return Err(Error::Config(format!("grid_snap must be > 0, got {snap}")));
            }
        }
        Ok(())
    }

    /// `{0}` plus the geometric grid, snapped to multiples of the grid step.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        let dt = self.step_size()?.get();
        sample_grid(self.grid_snap.unwrap_or(dt), self.t_max, self.grid_points)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// `{0} ∪` a log-uniform grid of `points` times from `min(1, t_max)` to `t_max`,
/// each rounded to the nearest multiple of `snap`, deduplicated.
pub fn sample_grid(snap: f64, t_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(snap > 0.0 && t_max > 0.0) {
        return Err(Error::Config(format!(
            "sample grid needs positive step and horizon, got {snap}, {t_max}"
        )));
    }
    if points < 2 {
        return Err(Error::Config("sample grid needs at least 2 points".into()));
    }
    let last = (t_max / snap).floor().max(0.0) as u64;
    let start = t_max.min(1.0).ln();
    let stop = t_max.ln();
    let mut steps: Vec<u64> = (0..points)
        .map(|i| {
            let t = (start + (stop - start) * i as f64 / (points - 1) as f64).exp();
            ((t / snap).round() as u64).clamp(1, last.max(1))
        })
        .collect();
    steps.dedup();
    let mut times = Vec::with_capacity(steps.len() + 1);
    times.push(0.0);
    times.extend(steps.into_iter().map(|k| k as f64 * snap).filter(|&t| t <= t_max * (1.0 + 1e-12)));
    Ok(times)
}

/// Partial configuration as read from a TOML file or assembled from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub beta: Option<f64>,
    pub p: Option<f64>,
    #[serde(rename = "W")]
    pub width: Option<f64>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    #[serde(rename = "L")]
    pub half_width: Option<usize>,
    pub scheme: Option<SchemeName>,
    pub grid_points: Option<usize>,
    pub grid_snap: Option<f64>,
    pub seed: Option<u64>,
    pub moment_reference: Option<MomentReference>,
}

impl ConfigOverlay {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&self, base: &mut SimulationConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { base.$field = v; } )* };
        }
        set!(beta, p, width, t_max, half_width, scheme, grid_points, seed, moment_reference);
        if self.dt.is_some() {
            base.dt = self.dt;
        }
        if self.grid_snap.is_some() {
            base.grid_snap = self.grid_snap;
        }
    }
}
