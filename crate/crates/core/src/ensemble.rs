//! Disorder-ensemble averaging, checkpointing and parameter sweeps.
//!
//! Realization `r` of an ensemble with base seed `s` uses disorder seed
//! `s + r`. Realizations run in parallel but are always reduced in index
//! order, so results do not depend on the worker count.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::model::{initial_wavepacket, make_disorder};
use crate::observables::{MomentSeries, RunMeta, TAIL_MARGIN, TAIL_THRESHOLD};
use crate::propagator::{Propagator, SplitScheme};

/// Largest tolerated fraction of guard failures.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

pub fn realization_seed(base_seed: u64, realization: usize) -> u64 {
    base_seed.wrapping_add(realization as u64)
}

fn run_meta(config: &SimulationConfig, seed: u64) -> RunMeta {
    let mut resolved = config.resolved();
    resolved.seed = seed;
    RunMeta {
        config: resolved,
        seed,
        scheme: config.scheme().name,
        boundary: "periodic".into(),
        tail_margin: TAIL_MARGIN,
        tail_threshold: TAIL_THRESHOLD,
        version: crate::VERSION.into(),
        warnings: config.warnings(),
    }
}

/// One trajectory from the delta initial state with disorder seed `seed`.
pub fn run_realization(config: &SimulationConfig, seed: u64) -> Result<MomentSeries> {
    config.validate()?;
    let times = config.sample_times()?;
    let disorder = make_disorder(seed, config.size(), config.width)?;
    let psi0 = initial_wavepacket(config.size())?;
    let traj = Propagator::new(&disorder, config.params()?, config.scheme(), config.step_size()?)?
        .with_moment_reference(config.moment_reference)
        .evolve(&psi0, config.t_max, &times)?;
    Ok(MomentSeries {
        meta: run_meta(config, seed),
        records: traj.records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub sim: SimulationConfig,
    pub realizations: usize,
    /// Worker threads; does not affect results.
    #[serde(skip)]
    pub jobs: usize,
}

impl EnsembleConfig {
    pub fn new(sim: SimulationConfig, realizations: usize) -> Self {
        EnsembleConfig {
            sim,
            realizations,
            jobs: 1,
        }
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn base_seed(&self) -> u64 {
        self.sim.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.realizations == 0 {
            return Err(Error::Config("realization count must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical JSON of everything that determines the result.
    fn identity(&self) -> serde_json::Value {
        serde_json::json!({
            "sim": self.sim.resolved().to_json_value(),
            "realizations": self.realizations,
        })
    }

    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.identity().to_string().as_bytes()).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub realization: usize,
    pub seed: u64,
    pub t: f64,
    pub tail_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub config: SimulationConfig,
    pub realizations: usize,
    pub base_seed: u64,
    pub scheme: SplitScheme,
    pub boundary: String,
    pub tail_margin: usize,
    pub tail_threshold: f64,
    pub failures: Vec<RealizationFailure>,
    pub wall_time_s: f64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// Arithmetic mean of `m2` over completed realizations.
    pub mean_m2: Vec<f64>,
    pub stderr_m2: Vec<f64>,
    /// Mean of `ln m2`; `None` where some realization has `m2 = 0`.
    pub mean_log_m2: Vec<Option<f64>>,
    pub completed: usize,
    pub meta: EnsembleMeta,
}

pub const ENSEMBLE_CSV_HEADER: [&str; 4] = ["t", "mean_m2", "stderr_m2", "mean_log_m2"];

impl EnsembleResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ENSEMBLE_CSV_HEADER)?;
        for i in 0..self.times.len() {
            w.write_record([
                self.times[i].to_string(),
                self.mean_m2[i].to_string(),
                self.stderr_m2[i].to_string(),
                self.mean_log_m2[i].map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.meta)?;
        Ok(())
    }
}

/// Columns of an ensemble CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleTable {
    pub times: Vec<f64>,
    pub mean_m2: Vec<f64>,
    pub stderr_m2: Vec<f64>,
    pub mean_log_m2: Vec<Option<f64>>,
}

pub fn read_ensemble_csv<R: Read>(input: R) -> Result<EnsembleTable> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        mean_m2: f64,
        stderr_m2: f64,
        mean_log_m2: Option<f64>,
    }
    let mut table = EnsembleTable::default();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: Row = row?;
        table.times.push(row.t);
        table.mean_m2.push(row.mean_m2);
        table.stderr_m2.push(row.stderr_m2);
        table.mean_log_m2.push(row.mean_log_m2);
    }
    Ok(table)
}

/// Per-time running sums. The mean is `sum / count` so that a fixed
/// reduction order reproduces the plain arithmetic mean exactly; the spread
/// uses Welford's update.
#[derive(Clone, Debug, PartialEq)]
struct Accumulator {
    count: u64,
    sum: Vec<f64>,
    running_mean: Vec<f64>,
    sq_dev: Vec<f64>,
    sum_log: Vec<f64>,
    log_defined: Vec<bool>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Accumulator {
            count: 0,
            sum: vec![0.0; len],
            running_mean: vec![0.0; len],
            sq_dev: vec![0.0; len],
            sum_log: vec![0.0; len],
            log_defined: vec![true; len],
        }
    }

    fn push(&mut self, m2: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for (i, &x) in m2.iter().enumerate() {
            self.sum[i] += x;
            let delta = x - self.running_mean[i];
            self.running_mean[i] += delta / k;
            self.sq_dev[i] += delta * (x - self.running_mean[i]);
            if x > 0.0 {
                self.sum_log[i] += x.ln();
            } else {
                self.log_defined[i] = false;
            }
        }
    }

    fn mean(&self) -> Vec<f64> {
        let k = self.count as f64;
        self.sum.iter().map(|s| s / k).collect()
    }

    fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.sum.len()];
        }
        let k = self.count as f64;
        self.sq_dev.iter().map(|q| (q / (k - 1.0) / k).sqrt()).collect()
    }

    fn mean_log(&self) -> Vec<Option<f64>> {
        let k = self.count as f64;
        self.sum_log
            .iter()
            .zip(&self.log_defined)
            .map(|(s, &ok)| (ok && self.count > 0).then(|| s / k))
            .collect()
    }
}

/// Saved progress of an ensemble run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    config_hash: [u8; 32],
    config_json: String,
    next_realization: usize,
    failures: Vec<RealizationFailure>,
    acc: Accumulator,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DNLSECKP";
const CHECKPOINT_VERSION: u32 = 1;

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or("truncated file")?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn next_realization(&self) -> usize {
        self.next_realization
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.config_json.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.next_realization as u64).to_le_bytes());
        out.extend_from_slice(&(self.failures.len() as u64).to_le_bytes());
        for f in &self.failures {
            out.extend_from_slice(&(f.realization as u64).to_le_bytes());
            out.extend_from_slice(&f.seed.to_le_bytes());
            out.extend_from_slice(&f.t.to_bits().to_le_bytes());
            out.extend_from_slice(&f.tail_mass.to_bits().to_le_bytes());
        }
        let acc = &self.acc;
        out.extend_from_slice(&acc.count.to_le_bytes());
        out.extend_from_slice(&(acc.sum.len() as u64).to_le_bytes());
        for column in [&acc.sum, &acc.running_mean, &acc.sq_dev, &acc.sum_log] {
            for v in column.iter() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out.extend(acc.log_defined.iter().map(|&b| b as u8));
        out
    }

    fn decode(data: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader { data, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("not an ensemble checkpoint".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("format version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let len = r.u64()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let next_realization = r.u64()? as usize;
        let n_fail = r.u64()? as usize;
        let mut failures = Vec::new();
        for _ in 0..n_fail {
            failures.push(RealizationFailure {
                realization: r.u64()? as usize,
                seed: r.u64()?,
                t: r.f64()?,
                tail_mass: r.f64()?,
            });
        }
        let count = r.u64()?;
        let n = r.u64()? as usize;
        let sum = r.f64s(n)?;
        let running_mean = r.f64s(n)?;
        let sq_dev = r.f64s(n)?;
        let sum_log = r.f64s(n)?;
        let log_defined = r.take(n)?.iter().map(|&b| b != 0).collect();
        if r.pos != data.len() {
            return Err("trailing bytes".into());
        }
        Ok(Checkpoint {
            config_hash,
            config_json,
            next_realization,
            failures,
            acc: Accumulator {
                count,
                sum,
                running_mean,
                sq_dev,
                sum_log,
                log_defined,
            },
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = BufWriter::new(File::create(&tmp)?);
            f.write_all(&self.encode())?;
            f.flush()?;
            f.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        Checkpoint::decode(&data).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Refuses a checkpoint written for a different configuration, listing
    /// the differing fields.
    fn ensure_matches(&self, cfg: &EnsembleConfig, path: &Path) -> Result<()> {
        if self.config_hash == cfg.config_hash() {
            return Ok(());
        }
        let saved: serde_json::Value = serde_json::from_str(&self.config_json).unwrap_or_default();
        let diff = config_diff(&saved, &cfg.identity());
        Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("configuration differs: {}", diff.join(", ")),
        })
    }
}

fn config_diff(old: &serde_json::Value, new: &serde_json::Value) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    let null = serde_json::Value::Null;
                    walk(&path, x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), out);
                }
            }
            _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", old, new, &mut out);
    out
}

#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    /// Realizations between saves.
    pub every: usize,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum EnsembleOutcome {
    Complete(EnsembleResult),
    /// Stopped early; progress is in the checkpoint.
    Interrupted { next_realization: usize },
}

/// Controls for [`run_ensemble_with`].
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    pub checkpoint: Option<CheckpointPolicy>,
    pub resume_from: Option<PathBuf>,
    /// Stop once this many realizations are done, as if killed.
    pub stop_after: Option<usize>,
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    match run_ensemble_with(cfg, &RunControl::default())? {
        EnsembleOutcome::Complete(result) => Ok(result),
        EnsembleOutcome::Interrupted { .. } => unreachable!("no stop requested"),
    }
}

enum RealizationOutcome {
    Done(Vec<f64>),
    Failed(RealizationFailure),
}

fn simulate(cfg: &EnsembleConfig, times: &[f64], r: usize) -> Result<RealizationOutcome> {
    let sim = &cfg.sim;
    let seed = realization_seed(cfg.base_seed(), r);
    let disorder = make_disorder(seed, sim.size(), sim.width)?;
    let psi0 = initial_wavepacket(sim.size())?;
    let run = Propagator::new(&disorder, sim.params()?, sim.scheme(), sim.step_size()?)?
        .with_moment_reference(sim.moment_reference)
        .evolve(&psi0, sim.t_max, times);
    match run {
        Ok(traj) => Ok(RealizationOutcome::Done(traj.records.iter().map(|r| r.m2).collect())),
        Err(Error::BoundaryContamination { t, tail_mass, .. }) => Ok(RealizationOutcome::Failed(RealizationFailure {
            realization: r,
            seed,
            t,
            tail_mass,
        })),
        Err(e) => Err(e),
    }
}

pub fn run_ensemble_with(cfg: &EnsembleConfig, control: &RunControl) -> Result<EnsembleOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let times = cfg.sim.sample_times()?;
    let (mut next, mut failures, mut acc) = match &control.resume_from {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.ensure_matches(cfg, path)?;
            if ckpt.acc.sum.len() != times.len() {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: "sample grid length differs".into(),
                });
            }
            log::info!("resuming at realization {} of {}", ckpt.next_realization, cfg.realizations);
            (ckpt.next_realization, ckpt.failures, ckpt.acc)
        }
        None => (0, Vec::new(), Accumulator::new(times.len())),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let chunk = control
        .checkpoint
        .as_ref()
        .map(|c| c.every.max(1))
        .unwrap_or(cfg.jobs.max(1) * 8);
    let stop = control.stop_after.unwrap_or(cfg.realizations).min(cfg.realizations);

    while next < stop {
        let end = (next + chunk).min(stop);
        let outcomes: Vec<Result<RealizationOutcome>> =
            pool.install(|| (next..end).into_par_iter().map(|r| simulate(cfg, &times, r)).collect());
        for outcome in outcomes {
            match outcome? {
                RealizationOutcome::Done(m2) => acc.push(&m2),
                RealizationOutcome::Failed(f) => {
                    log::warn!("realization {} (seed {}) hit the boundary at t = {}", f.realization, f.seed, f.t);
                    failures.push(f);
                }
            }
        }
        next = end;
        log::info!("{next}/{} realizations done, {} failed", cfg.realizations, failures.len());
        if let Some(policy) = &control.checkpoint {
            Checkpoint {
                config_hash: cfg.config_hash(),
                config_json: cfg.identity().to_string(),
                next_realization: next,
                failures: failures.clone(),
                acc: acc.clone(),
            }
            .save(&policy.path)?;
        }
    }

    if next < cfg.realizations {
        return Ok(EnsembleOutcome::Interrupted { next_realization: next });
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * cfg.realizations as f64 || acc.count == 0 {
        return Err(Error::EnsembleInvalid {
            failed: failures.len(),
            total: cfg.realizations,
        });
    }

    let meta = EnsembleMeta {
        config: cfg.sim.resolved(),
        realizations: cfg.realizations,
        base_seed: cfg.base_seed(),
        scheme: cfg.sim.scheme(),
        boundary: "periodic".into(),
        tail_margin: TAIL_MARGIN,
        tail_threshold: TAIL_THRESHOLD,
        failures,
        wall_time_s: started.elapsed().as_secs_f64(),
        version: crate::VERSION.into(),
        warnings: cfg.sim.warnings(),
    };
    Ok(EnsembleOutcome::Complete(EnsembleResult {
        mean_m2: acc.mean(),
        stderr_m2: acc.stderr(),
        mean_log_m2: acc.mean_log(),
        completed: acc.count as usize,
        times,
        meta,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub betas: Vec<f64>,
    pub ps: Vec<f64>,
}

/// Base seed of sweep point `(p_index, beta_index)`:
/// `base + p_index * 2^40 + beta_index * 2^20`. Together with the
/// realization offset (below `2^20`) every disorder seed in a sweep is distinct.
pub fn point_seed(base_seed: u64, p_index: usize, beta_index: usize) -> u64 {
    base_seed
        .wrapping_add((p_index as u64) << 40)
        .wrapping_add((beta_index as u64) << 20)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub p: f64,
    pub beta_index: usize,
    pub p_index: usize,
    pub seed: u64,
    pub result: Option<EnsembleResult>,
    pub error: Option<String>,
}

/// One ensemble per `(p, beta)` grid point; failures are recorded and the
/// sweep continues. A template without `dt` takes the β-keyed default.
pub fn sweep(grid: &SweepGrid, template: &EnsembleConfig) -> Result<Vec<SweepPoint>> {
    if grid.betas.is_empty() || grid.ps.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if template.realizations >= 1 << 20 || grid.betas.len() >= 1 << 20 || grid.ps.len() >= 1 << 24 {
        return Err(Error::Config("sweep too large for the seed layout".into()));
    }
    let mut points = Vec::with_capacity(grid.betas.len() * grid.ps.len());
    for (bi, &beta) in grid.betas.iter().enumerate() {
        for (pi, &p) in grid.ps.iter().enumerate() {
            let seed = point_seed(template.base_seed(), pi, bi);
            let mut cfg = template.clone();
            cfg.sim.beta = beta;
            cfg.sim.p = p;
            cfg.sim.seed = seed;
            log::info!("sweep point beta = {beta}, p = {p}, seed = {seed}");
            let (result, error) = match run_ensemble(&cfg) {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    log::warn!("sweep point beta = {beta}, p = {p} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            points.push(SweepPoint {
                beta,
                p,
                beta_index: bi,
                p_index: pi,
                seed,
                result,
                error,
            });
        }
    }
    Ok(points)
}
