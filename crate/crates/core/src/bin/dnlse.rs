use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dnlse::analysis::{
    fit_alpha, fit_alpha_with_errors, fit_stability, read_alpha_curves, scaling_collapse, write_alpha_curves,
    write_collapse_columns, AlphaCurve, AlphaPoint, FitResult, FitWindow, StabilityReport,
};
use dnlse::config::{ConfigOverlay, SchemeName};
use dnlse::ensemble::{
    read_ensemble_csv, run_ensemble, run_ensemble_with, run_realization, sweep, CheckpointPolicy, EnsembleConfig,
    EnsembleOutcome, EnsembleResult, RunControl, SweepGrid,
};
use dnlse::observables::read_series_csv;
use dnlse::validation::{check_t1, check_t2, check_t3, CriterionReport};
use dnlse::{Error, SimulationConfig};

#[derive(Parser, Debug)]
#[command(name = "dnlse", version, about = "Disordered nonlinear lattice spreading simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// TOML file with configuration fields; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Disorder width.
    #[arg(long = "W", global = true)]
    width: Option<f64>,
    /// Time step; defaults from the β table.
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    /// Lattice half-width; the lattice has 2L+1 sites.
    #[arg(long = "L", global = true)]
    half_width: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    scheme: Option<SchemeName>,
    /// Geometric sample points on the time grid.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Realizations.
    #[arg(long = "R", global = true)]
    realizations: Option<usize>,
    /// Worker threads for ensembles.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fit window `T_LO T_HI`.
    #[arg(long, global = true, num_args = 2, value_names = ["T_LO", "T_HI"])]
    window: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single realization; writes series.csv and series.json.
    Run {
        /// Also write the on-site energies to disorder.txt.
        #[arg(long)]
        write_disorder: bool,
    },
    /// Disorder average; writes ensemble.csv and ensemble.json.
    Ensemble {
        /// Save progress to this file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Realizations between checkpoint saves.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Ensembles over a (β, p) grid read from a TOML file.
    Sweep { grid: PathBuf },
    /// Reliability criteria; prints a JSON report array.
    Validate {
        #[arg(long)]
        t1: bool,
        #[arg(long)]
        t2: bool,
        #[arg(long)]
        t3: bool,
        /// Horizon of the checks; defaults to t_max.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Power-law fits of ensemble or single-run CSV files.
    Fit {
        /// Several windows `LO,HI` for a stability table; list files before this flag.
        #[arg(long, num_args = 1.., value_parser = parse_window)]
        windows: Option<Vec<FitWindow>>,
        /// Write the α(β, p) table to this CSV file.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Affine collapse of α(p) curves onto a reference β.
    Collapse {
        #[arg(long)]
        reference_beta: f64,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn parse_window(s: &str) -> Result<FitWindow, String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    FitWindow::new(lo, hi).map_err(|e| e.to_string())
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BoundaryContamination { .. } | Error::EnsembleInvalid { .. } => 3,
            Error::FitDomain { .. }
            | Error::InsufficientData(_)
            | Error::DegenerateCollapse { .. }
            | Error::DegenerateDenominator { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

impl Shared {
    fn overlay(&self) -> ConfigOverlay {
        ConfigOverlay {
            beta: self.beta,
            p: self.p,
            width: self.width,
            dt: self.dt,
            t_max: self.t_max,
            half_width: self.half_width,
            scheme: self.scheme,
            grid_points: self.grid_points,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// Defaults, then the config file, then `extra` (a sweep file section),
    /// then flags.
    fn simulation(&self, extra: Option<&ConfigOverlay>) -> CliResult<SimulationConfig> {
        let mut cfg = SimulationConfig::default();
        if let Some(path) = &self.config {
            ConfigOverlay::from_toml_file(path)?.apply(&mut cfg);
        }
        if let Some(extra) = extra {
            extra.apply(&mut cfg);
        }
        self.overlay().apply(&mut cfg);
        cfg.validate()?;
        for w in cfg.warnings() {
            log::warn!("{w}");
        }
        Ok(cfg)
    }

    fn ensemble(&self, sim: SimulationConfig, default_r: usize) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(sim, self.realizations.unwrap_or(default_r));
        if let Some(jobs) = self.jobs {
            cfg = cfg.with_jobs(jobs);
        }
        cfg
    }

    fn window(&self) -> CliResult<Option<FitWindow>> {
        match self.window.as_deref() {
            None => Ok(None),
            Some([lo, hi]) => Ok(Some(FitWindow::new(*lo, *hi)?)),
            Some(_) => Err(usage("--window takes two values")),
        }
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    let shared = &cli.shared;
    match cli.command {
        Command::Run { write_disorder } => cmd_run(shared, write_disorder),
        Command::Ensemble {
            checkpoint,
            checkpoint_every,
            resume,
            stop_after,
        } => cmd_ensemble(shared, checkpoint, checkpoint_every, resume, stop_after),
        Command::Sweep { grid } => cmd_sweep(shared, &grid),
        Command::Validate { t1, t2, t3, horizon } => cmd_validate(shared, t1, t2, t3, horizon),
        Command::Fit { windows, curves, files } => cmd_fit(shared, windows, curves, &files),
        Command::Collapse { reference_beta, files } => cmd_collapse(shared, reference_beta, &files),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn rejects_realizations(shared: &Shared, command: &str) -> CliResult<()> {
    if shared.realizations.is_some() || shared.jobs.is_some() {
        return Err(usage(format!("--R and --jobs do not apply to `{command}`")));
    }
    Ok(())
}

fn cmd_run(shared: &Shared, write_disorder: bool) -> CliResult<u8> {
    rejects_realizations(shared, "run")?;
    let cfg = shared.simulation(None)?;
    let dir = shared.out_dir()?;
    let series = run_realization(&cfg, cfg.seed)?;
    series.write_csv(create(&dir.join("series.csv"))?)?;
    write_json_file(&dir.join("series.json"), &series.meta)?;
    if write_disorder {
        let disorder = dnlse::model::make_disorder(cfg.seed, cfg.size(), cfg.width)?;
        let mut w = create(&dir.join("disorder.txt"))?;
        disorder.write_table(&mut w)?;
        w.flush()?;
    }
    log::info!("wrote {} samples to {}", series.records.len(), dir.display());
    Ok(0)
}

fn write_ensemble(dir: &Path, stem: &str, result: &EnsembleResult) -> CliResult<()> {
    result.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
    write_json_file(&dir.join(format!("{stem}.json")), &result.meta)
}

fn cmd_ensemble(
    shared: &Shared,
    checkpoint: Option<PathBuf>,
    every: usize,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
) -> CliResult<u8> {
    if every == 0 {
        return Err(usage("--checkpoint-every must be at least 1"));
    }
    let cfg = shared.ensemble(shared.simulation(None)?, 200);
    cfg.validate()?;
    let dir = shared.out_dir()?;
    let checkpoint_path = checkpoint.or_else(|| resume.clone());
    if stop_after.is_some() && checkpoint_path.is_none() {
        return Err(usage("--stop-after needs --checkpoint"));
    }
    let control = RunControl {
        checkpoint: checkpoint_path.map(|path| CheckpointPolicy { path, every }),
        resume_from: resume,
        stop_after,
    };
    match run_ensemble_with(&cfg, &control)? {
        EnsembleOutcome::Complete(result) => {
            write_ensemble(&dir, "ensemble", &result)?;
            log::info!("{} realizations averaged into {}", result.completed, dir.display());
            Ok(0)
        }
        EnsembleOutcome::Interrupted { next_realization } => {
            log::info!("stopped after {next_realization} realizations");
            Ok(0)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    betas: Vec<f64>,
    ps: Vec<f64>,
    #[serde(rename = "R")]
    realizations: Option<usize>,
    #[serde(default)]
    config: ConfigOverlay,
}

#[derive(Serialize)]
struct SweepIndexRow {
    beta: f64,
    p: f64,
    beta_index: usize,
    p_index: usize,
    seed: u64,
    completed: usize,
    file: String,
    error: String,
}

fn cmd_sweep(shared: &Shared, grid_path: &Path) -> CliResult<u8> {
    let text = fs::read_to_string(grid_path)?;
    let file: SweepFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", grid_path.display())))?;
    if shared.beta.is_some() || shared.p.is_some() {
        return Err(usage("--beta and --p are set by the sweep grid"));
    }
    let window = shared.window()?;
    let sim = shared.simulation(Some(&file.config))?;
    let template = shared.ensemble(sim, file.realizations.unwrap_or(200));
    let grid = SweepGrid {
        betas: file.betas,
        ps: file.ps,
    };
    for &beta in &grid.betas {
        for &p in &grid.ps {
            let mut probe = template.clone();
            probe.sim.beta = beta;
            probe.sim.p = p;
            probe.validate()?;
        }
    }
    let dir = shared.out_dir()?;
    let points = sweep(&grid, &template)?;

    let mut index = csv::Writer::from_writer(create(&dir.join("sweep.csv"))?);
    let mut curves: Vec<AlphaCurve> = Vec::new();
    let mut failed = false;
    for pt in &points {
        let stem = format!("beta{}_p{}", pt.beta, pt.p);
        let mut row = SweepIndexRow {
            beta: pt.beta,
            p: pt.p,
            beta_index: pt.beta_index,
            p_index: pt.p_index,
            seed: pt.seed,
            completed: 0,
            file: String::new(),
            error: pt.error.clone().unwrap_or_default(),
        };
        if let Some(result) = &pt.result {
            write_ensemble(&dir, &stem, result)?;
            row.completed = result.completed;
            row.file = format!("{stem}.csv");
            if let Some(w) = window {
                match fit_alpha_with_errors(&result.times, &result.mean_m2, &result.stderr_m2, w) {
                    Ok(fit) => push_alpha(&mut curves, pt.beta, pt.p, &fit),
                    Err(e) => {
                        log::warn!("fit at beta = {}, p = {} failed: {e}", pt.beta, pt.p);
                        failed = true;
                    }
                }
            }
        } else {
            failed = true;
        }
        index.serialize(row).map_err(Error::from)?;
    }
    index.flush()?;
    if window.is_some() {
        let curves = sorted_curves(curves)?;
        write_alpha_curves(&curves, create(&dir.join("alpha_curves.csv"))?)?;
    }
    Ok(u8::from(failed))
}

fn push_alpha(curves: &mut Vec<AlphaCurve>, beta: f64, p: f64, fit: &FitResult) {
    let point = AlphaPoint {
        p,
        alpha: fit.alpha,
        alpha_stderr: fit.alpha_stderr(),
    };
    match curves.iter_mut().find(|c| c.beta == beta) {
        Some(c) => c.points.push(point),
        None => curves.push(AlphaCurve {
            beta,
            points: vec![point],
        }),
    }
}

fn sorted_curves(curves: Vec<AlphaCurve>) -> CliResult<Vec<AlphaCurve>> {
    Ok(curves
        .into_iter()
        .map(|c| AlphaCurve::new(c.beta, c.points))
        .collect::<dnlse::Result<Vec<_>>>()?)
}

fn cmd_validate(shared: &Shared, t1: bool, t2: bool, t3: bool, horizon: Option<f64>) -> CliResult<u8> {
    if !(t1 || t2 || t3) {
        return Err(usage("select at least one of --t1, --t2, --t3"));
    }
    if !t3 && (shared.realizations.is_some() || shared.jobs.is_some()) {
        return Err(usage("--R and --jobs only apply to --t3"));
    }
    let sim = shared.simulation(None)?;
    let horizon = horizon.unwrap_or(sim.t_max);
    if !(horizon > 0.0 && horizon <= sim.t_max) {
        return Err(usage(format!("--horizon must lie in (0, t_max = {}]", sim.t_max)));
    }
    let mut reports: Vec<CriterionReport> = Vec::new();
    if t1 {
        reports.push(check_t1(&sim, sim.seed, horizon)?);
    }
    if t2 {
        reports.push(check_t2(&sim, sim.seed, horizon)?);
    }
    if t3 {
        let mut coarse_sim = sim.resolved();
        coarse_sim.t_max = horizon;
        let mut fine_sim = coarse_sim.clone();
        fine_sim.dt = Some(coarse_sim.step_size()?.halved().get());
        let coarse = run_ensemble(&shared.ensemble(coarse_sim, 200))?;
        let fine = run_ensemble(&shared.ensemble(fine_sim, 200))?;
        reports.push(check_t3(&coarse, &fine)?);
    }
    for r in &reports {
        log::info!(
            "{:?}: {} (value {:.3e}, threshold {})",
            r.criterion,
            if r.passed { "pass" } else { "FAIL" },
            r.value,
            r.threshold
        );
    }
    print_json(&reports)?;
    if let Some(dir) = &shared.out {
        fs::create_dir_all(dir)?;
        write_json_file(&dir.join("validate.json"), &reports)?;
    }
    Ok(u8::from(reports.iter().any(|r| !r.passed)))
}

/// Series read from a data file plus the β and p of its sidecar.
struct FitInput {
    beta: f64,
    p: f64,
    times: Vec<f64>,
    m2: Vec<f64>,
    stderr: Option<Vec<f64>>,
}

fn load_fit_input(shared: &Shared, path: &Path) -> CliResult<FitInput> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let is_ensemble = reader.headers().map_err(Error::from)?.iter().any(|h| h == "mean_m2");
    drop(reader);
    let data = BufReader::new(File::open(path)?);
    let (times, m2, stderr) = if is_ensemble {
        let table = read_ensemble_csv(data)?;
        (table.times, table.mean_m2, Some(table.stderr_m2))
    } else {
        let records = read_series_csv(data)?;
        (
            records.iter().map(|r| r.t).collect(),
            records.iter().map(|r| r.m2).collect(),
            None,
        )
    };

    let sidecar = path.with_extension("json");
    let meta: Option<serde_json::Value> = match File::open(&sidecar) {
        Ok(f) => Some(serde_json::from_reader(BufReader::new(f)).map_err(Error::from)?),
        Err(_) => None,
    };
    let from_meta = |key: &str| meta.as_ref().and_then(|m| m["config"][key].as_f64());
    let beta = shared
        .beta
        .or_else(|| from_meta("beta"))
        .ok_or_else(|| usage(format!("{}: no sidecar with beta; pass --beta", path.display())))?;
    let p = shared
        .p
        .or_else(|| from_meta("p"))
        .ok_or_else(|| usage(format!("{}: no sidecar with p; pass --p", path.display())))?;
    Ok(FitInput {
        beta,
        p,
        times,
        m2,
        stderr,
    })
}

#[derive(Serialize)]
struct FileFit {
    file: String,
    beta: f64,
    p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stability: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_fit(shared: &Shared, windows: Option<Vec<FitWindow>>, curves_path: Option<PathBuf>, files: &[PathBuf]) -> CliResult<u8> {
    let window = shared.window()?;
    let windows = match (window, windows) {
        (Some(_), Some(_)) => return Err(usage("use either --window or --windows")),
        (Some(w), None) => vec![w],
        (None, Some(ws)) => ws,
        (None, None) => vec![FitWindow::new(500.0, 1000.0)?],
    };
    let mut out = Vec::new();
    let mut curves = Vec::new();
    let mut failed = false;
    for path in files {
        let input = load_fit_input(shared, path)?;
        let mut entry = FileFit {
            file: path.display().to_string(),
            beta: input.beta,
            p: input.p,
            fit: None,
            stability: None,
            error: None,
        };
        if windows.len() == 1 {
            let fit = match &input.stderr {
                Some(se) => fit_alpha_with_errors(&input.times, &input.m2, se, windows[0]),
                None => fit_alpha(&input.times, &input.m2, windows[0]),
            };
            match fit {
                Ok(fit) => {
                    push_alpha(&mut curves, input.beta, input.p, &fit);
                    entry.fit = Some(fit);
                }
                Err(e) => {
                    failed = true;
                    entry.error = Some(e.to_string());
                }
            }
        } else {
            let report = fit_stability(&input.times, &input.m2, &windows);
            if report.fits.iter().any(|f| f.error.is_some()) {
                failed = true;
            }
            if let Some(fit) = report.fits.iter().find_map(|f| f.fit.as_ref()) {
                push_alpha(&mut curves, input.beta, input.p, fit);
            }
            entry.stability = Some(report);
        }
        out.push(entry);
    }
    print_json(&out)?;
    if let Some(dir) = &shared.out {
        fs::create_dir_all(dir)?;
        write_json_file(&dir.join("fit.json"), &out)?;
    }
    if let Some(path) = curves_path {
        write_alpha_curves(&sorted_curves(curves)?, create(&path)?)?;
    }
    Ok(u8::from(failed))
}

fn cmd_collapse(shared: &Shared, reference_beta: f64, files: &[PathBuf]) -> CliResult<u8> {
    let mut curves: Vec<AlphaCurve> = Vec::new();
    for path in files {
        for c in read_alpha_curves(BufReader::new(File::open(path)?))? {
            if curves.iter().any(|k| k.beta == c.beta) {
                return Err(usage(format!("beta = {} appears in more than one input", c.beta)));
            }
            curves.push(c);
        }
    }
    let result = scaling_collapse(&curves, reference_beta)?;
    print_json(&result)?;
    if let Some(dir) = &shared.out {
        fs::create_dir_all(dir)?;
        write_json_file(&dir.join("collapse.json"), &result)?;
        let mut table = csv::Writer::from_writer(create(&dir.join("collapse.csv"))?);
        for c in &result.curves {
            table.serialize(c).map_err(Error::from)?;
        }
        table.flush()?;
        let mut cols = create(&dir.join("collapse.dat"))?;
        write_collapse_columns(&curves, &result, &mut cols)?;
        cols.flush()?;
    }
    Ok(0)
}
