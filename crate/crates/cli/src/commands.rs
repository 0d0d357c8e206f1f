use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use nlim::io::{
    load_trajectory, read_json, save_trajectory, write_json, FitFile, ModelFile, ModelKind, MomentFile,
    SCHEMA_VERSION,
};
use nlim::lim::{default_gamma_grid, log_grid};
use nlim::nonlinear::{colored_nlim_fit, white_nlim_fit, ConstraintSpec, QRefine};
use nlim::preprocess::{load_monthly, preprocess_enso};
use nlim::sim::{default_wall, BurnIn, DEFAULT_WALL_MULTIPLIER};
use nlim::validate::{
    compare_to_data, fit_inputs, run_lorenz, run_table1, CompareConfig, LorenzConfig, Table1Config,
};
use nlim::{
    colored_lim_fit, estimate_moments, forward_derivatives, gamma_select, simulate, white_lim_fit, DiffScheme,
    Error, Execution, MomentOptions, NoiseSpec, SimPlan, Trajectory, WallSpec,
};

pub enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Compute(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "nlim", version, about = "Fit, simulate and score linear and quadratic stochastic inverse models")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a model stored as JSON and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Estimate lagged moments of a trajectory.
    Moments(MomentsArgs),
    /// Fit a model to a trajectory.
    Fit(FitArgs),
    /// Scan the noise correlation time of a colored linear model.
    GammaScan(GammaScanArgs),
    /// Run a parameter-recovery experiment on synthetic data.
    Validate(ValidateArgs),
    /// Score a fitted model against data.
    Compare(CompareArgs),
    /// Detrend, deseasonalize, standardize and smooth a monthly series.
    Preprocess(PreprocessArgs),
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Model JSON (as written by `fit`, or the `model` object of a fit report).
    #[arg(long)]
    model: PathBuf,
    /// Recorded duration.
    #[arg(long)]
    tf: f64,
    /// Integration step.
    #[arg(long, default_value_t = 0.001)]
    dt: f64,
    /// Record every `subsample`-th step.
    #[arg(long, default_value_t = 1)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Initial state as comma-separated values (default: wall centre or origin).
    #[arg(long)]
    x0: Option<String>,
    /// Burn-in time discarded before recording (default: automatic).
    #[arg(long)]
    burn_in: Option<f64>,
    /// Also write the colored-noise path as `eta` columns.
    #[arg(long)]
    record_noise: bool,
    /// `auto` uses the wall stored with the model, `off` disables it, `r,m`
    /// sets radius and steepness around the stored (or zero) centre.
    #[arg(long, default_value = "auto")]
    wall: String,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MomentsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Largest lag (in samples) of K and M.
    #[arg(long, default_value_t = 24)]
    max_lag: usize,
    /// Largest lag (in samples) of S.
    #[arg(long, default_value_t = 1)]
    max_lag_s: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Method {
    WhiteLim,
    ColoredLim,
    WhiteNlim,
    ColoredNlim,
}

impl Method {
    fn kind(self) -> ModelKind {
        match self {
            Method::WhiteLim => ModelKind::WhiteLim,
            Method::ColoredLim => ModelKind::ColoredLim,
            Method::WhiteNlim => ModelKind::WhiteNlim,
            Method::ColoredNlim => ModelKind::ColoredNlim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Serialize)]
struct RefineArgs {
    /// Simulation-based refinement of Q for colored nonlinear fits.
    #[arg(long, value_enum)]
    refine: Option<Switch>,
    /// Seed of the refinement simulations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Objective evaluation budget (default 200 per unknown).
    #[arg(long)]
    max_evals: Option<usize>,
    /// Integration step of the objective simulations.
    #[arg(long)]
    sim_dt: Option<f64>,
    /// Duration of the objective simulations.
    #[arg(long)]
    sim_length: Option<f64>,
}

impl RefineArgs {
    fn build(&self, default_on: bool) -> QRefine {
        let enabled = self.refine.map_or(default_on, |s| s == Switch::On);
        QRefine {
            enabled,
            seed: self.seed,
            sim_dt: self.sim_dt,
            sim_length: self.sim_length,
            max_evals: self.max_evals,
            ..QRefine::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    /// Noise correlation time for colored methods.
    #[arg(long)]
    gamma: Option<f64>,
    /// Log-spaced scan `lo:hi:count`; used for colored methods when no
    /// `--gamma` is given (default 0.01:2:40).
    #[arg(long)]
    gamma_grid: Option<String>,
    /// Lag window of the scan objective, in time units (default 12 samples).
    #[arg(long)]
    window: Option<f64>,
    /// ConstraintSpec JSON for nonlinear methods.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[command(flatten)]
    refine: RefineArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GammaScanArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "0.01:2:40")]
    gamma_grid: String,
    /// Lag window of the objective, in time units (default 12 samples).
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Experiment {
    Table1,
    Lorenz,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum NoiseArg {
    White,
    Colored,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Full-size run (100 realizations, or T_f = 10000 for Lorenz) instead
    /// of the desk-scale default.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise of the two-dimensional benchmark.
    #[arg(long, value_enum, default_value = "white")]
    noise: NoiseArg,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Override the recorded duration.
    #[arg(long)]
    tf: Option<f64>,
    /// Override the number of realizations.
    #[arg(long)]
    realizations: Option<usize>,
    /// Sampling interval as a multiple of the integration step.
    #[arg(long)]
    subsample: Option<usize>,
    /// Fit Lorenz without structural constraints.
    #[arg(long)]
    unrestricted: bool,
    #[arg(long, value_enum)]
    refine: Option<Switch>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    sim_dt: Option<f64>,
    #[arg(long)]
    sim_length: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    /// Fit report or model JSON.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of `corr,wasserstein`.
    #[arg(long, default_value = "corr,wasserstein")]
    metrics: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated duration as a multiple of the data duration.
    #[arg(long, default_value_t = 10.0)]
    length: f64,
    /// Integration step (default: a tenth of the sampling interval).
    #[arg(long)]
    sim_dt: Option<f64>,
    /// Largest lag (in samples) of the correlation table.
    #[arg(long, default_value_t = 24)]
    max_lag: usize,
    /// Correlation table CSV (default: the report path with a `.csv` extension).
    #[arg(long)]
    #[serde(skip)]
    csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PreprocessArgs {
    /// Monthly CSV with header `date,<names>` and `YYYY-MM` dates.
    #[arg(long)]
    data: PathBuf,
    /// Odd smoothing window in months.
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Moments(a) => cmd_moments(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::GammaScan(a) => cmd_gamma_scan(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
    }
}

fn header(command: &str, args: &impl Serialize) -> std::result::Result<Value, Failure> {
    Ok(serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "arguments": serde_json::to_value(args)?,
    }))
}

/// Writes `body` with the invocation header under `config`.
fn emit(path: &Path, body: &impl Serialize, config: Value) -> Outcome {
    let mut v = serde_json::to_value(body)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("config".into(), config);
            map.entry("schema_version").or_insert(SCHEMA_VERSION.into());
        }
        _ => {
            v = serde_json::json!({ "schema_version": SCHEMA_VERSION, "config": config, "result": v });
        }
    }
    write_json(path, &v)?;
    Ok(())
}

fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("gamma grid {s:?} is not lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(log_grid(lo, hi, k)?)
}

fn parse_list(s: &str, what: &str) -> std::result::Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("{what}: cannot parse {t:?}"))))
        .collect()
}

fn load_model(path: &Path) -> std::result::Result<ModelFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let v: Value = serde_json::from_str(&text)?;
    let model = if v.get("model").is_some() && v.get("A").is_none() {
        v["model"].clone()
    } else {
        v
    };
    Ok(serde_json::from_value(model)?)
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    let file = load_model(&a.model)?;
    let model = file.to_quad()?;
    let n = model.n();
    let wall = match a.wall.as_str() {
        "auto" => file.wall.clone().unwrap_or_else(|| WallSpec::disabled(n)),
        "off" => WallSpec::disabled(n),
        spec => {
            let v = parse_list(spec, "--wall")?;
            if v.len() != 2 {
                return Err(usage("--wall expects auto, off or radius,steepness"));
            }
            let center = file.wall.as_ref().map_or(vec![0.0; n], |w| w.center.clone());
            WallSpec::new(center, v[0], v[1])?
        }
    };
    let x0 = match &a.x0 {
        Some(s) => parse_list(s, "--x0")?,
        None => file.wall.as_ref().map_or(vec![0.0; n], |w| w.center.clone()),
    };
    let mut plan = SimPlan::new(n, a.dt, a.tf, a.subsample, a.seed)
        .with_stream(a.stream)
        .with_initial_state(x0)
        .with_noise_recording(a.record_noise);
    if let Some(b) = a.burn_in {
        plan = plan.with_burn_in(BurnIn::Time(b));
    }
    let out = simulate(&model, &wall, &plan)?;
    let config = header("simulate", a)?;
    let comment = format!("{config}\nwall_activity = {}", out.wall_activity);
    save_trajectory(&a.out, &out.trajectory, &nlim::io::default_names(n), Some(&comment))?;
    Ok(())
}

fn cmd_moments(a: &MomentsArgs) -> Outcome {
    let data = load_trajectory(&a.data)?;
    let m = estimate_moments(&data.trajectory, MomentOptions::new(a.max_lag, a.max_lag_s))?;
    emit(&a.out, &MomentFile::from_moments(&m), header("moments", a)?)
}

fn default_window(dt: f64, window: Option<f64>) -> f64 {
    window.unwrap_or(12.0 * dt)
}

fn scan_moments(data: &Trajectory, window: f64) -> std::result::Result<(nlim::MomentSet, nlim::DerivativeSet), Failure> {
    let lags = ((window / data.dt) * (1.0 - 1e-12)).ceil().max(2.0) as usize;
    let m = estimate_moments(data, MomentOptions::new(lags, 1))?;
    let d = forward_derivatives(&m, DiffScheme::Forward)?;
    Ok((m, d))
}

fn cmd_fit(a: &FitArgs) -> Outcome {
    let kind = a.method.kind();
    if a.gamma.is_some() && a.gamma_grid.is_some() {
        return Err(usage("--gamma and --gamma-grid are mutually exclusive"));
    }
    if !kind.is_colored() && (a.gamma.is_some() || a.gamma_grid.is_some()) {
        return Err(usage("--gamma and --gamma-grid apply to colored methods only"));
    }
    if kind.is_linear() && a.constraints.is_some() {
        return Err(usage("--constraints applies to nonlinear methods only"));
    }
    let constraints: Option<ConstraintSpec> = match &a.constraints {
        Some(p) => Some(read_json(p)?),
        None => None,
    };
    let data = load_trajectory(&a.data)?.trajectory;
    let exec = Execution::default();
    let (m, d) = fit_inputs(&data, exec)?;

    let mut scan = None;
    let gamma = if kind.is_colored() {
        match a.gamma {
            Some(g) => Some(g),
            None => {
                let grid = match &a.gamma_grid {
                    Some(s) => parse_grid(s)?,
                    None => default_gamma_grid(),
                };
                let window = default_window(data.dt, a.window);
                let (ms, ds) = scan_moments(&data, window)?;
                let s = gamma_select(&ms, &ds, &grid, window, exec)?;
                let best = s.best;
                scan = Some(s);
                Some(best)
            }
        }
    } else {
        None
    };

    let mut file = match kind {
        ModelKind::WhiteLim => FitFile::from_linear(&white_lim_fit(&m, &d)?),
        ModelKind::ColoredLim => FitFile::from_linear(&colored_lim_fit(&m, &d, gamma.unwrap())?),
        ModelKind::WhiteNlim => FitFile::from_nonlinear(&white_nlim_fit(&m, &d, constraints.as_ref())?, kind),
        ModelKind::ColoredNlim => {
            let mut refine = a.refine.build(true);
            refine.exec = exec;
            refine.wall = Some(default_wall(&data, DEFAULT_WALL_MULTIPLIER)?);
            let report = colored_nlim_fit(&m, &d, gamma.unwrap(), constraints.as_ref(), &refine, data.duration())?;
            FitFile::from_nonlinear(&report, kind)
        }
    };
    if !kind.is_linear() {
        file.model.wall = Some(default_wall(&data, DEFAULT_WALL_MULTIPLIER)?);
    }
    file.gamma_scan = scan;
    for w in &file.warnings {
        log::warn!("{w}");
    }
    emit(&a.out, &file, header("fit", a)?)
}

fn cmd_gamma_scan(a: &GammaScanArgs) -> Outcome {
    let grid = parse_grid(&a.gamma_grid)?;
    let data = load_trajectory(&a.data)?.trajectory;
    let window = default_window(data.dt, a.window);
    let (m, d) = scan_moments(&data, window)?;
    let scan = gamma_select(&m, &d, &grid, window, Execution::default())?;
    println!("best gamma = {}", scan.best);
    emit(
        &a.out,
        &serde_json::json!({ "window": window, "scan": scan }),
        header("gamma-scan", a)?,
    )
}

fn cmd_validate(a: &ValidateArgs) -> Outcome {
    let config = header("validate", a)?;
    match a.experiment {
        Experiment::Table1 => {
            let noise = match a.noise {
                NoiseArg::White => NoiseSpec::White,
                NoiseArg::Colored => NoiseSpec::colored(a.gamma)?,
            };
            let tf = a.tf.unwrap_or(1000.0);
            let realizations = a.realizations.unwrap_or(if a.full { 100 } else { 20 });
            let mut cfg = Table1Config::new(noise, tf, realizations, a.seed);
            if let Some(s) = a.subsample {
                cfg.subsample = s;
            }
            let mut refine = QRefine {
                enabled: a.refine.is_none_or(|s| s == Switch::On),
                max_evals: a.max_evals,
                sim_dt: a.sim_dt,
                sim_length: a.sim_length,
                ..QRefine::default()
            };
            if !a.full {
                // Desk-scale budget for the colored refinement.
                refine.max_evals = refine.max_evals.or(Some(30));
                refine.sim_dt = refine.sim_dt.or(Some(0.005));
            }
            cfg.refine = refine;
            let table = run_table1(&cfg)?;
            print!("{}", table.to_text());
            emit(&a.out, &table, config)
        }
        Experiment::Lorenz => {
            let tf = a.tf.unwrap_or(if a.full { 10_000.0 } else { 2000.0 });
            let mut cfg = LorenzConfig::new(tf, !a.unrestricted, a.subsample.unwrap_or(1), a.seed);
            cfg.gamma = a.gamma;
            cfg.refine = QRefine {
                enabled: a.refine == Some(Switch::On),
                max_evals: a.max_evals,
                sim_dt: a.sim_dt,
                sim_length: a.sim_length,
                ..QRefine::default()
            };
            let run = run_lorenz(&cfg)?;
            print!("{}", run.to_text());
            let body = serde_json::json!({
                "experiment": run.config,
                "estimate": run.estimate,
                "fit": FitFile::from_nonlinear(&run.report, ModelKind::ColoredNlim),
            });
            emit(&a.out, &body, config)
        }
    }
}

#[derive(Serialize)]
struct MarginalRow {
    column: String,
    wasserstein1: f64,
    third_moment_data: f64,
    third_moment_model: f64,
}

fn cmd_compare(a: &CompareArgs) -> Outcome {
    let metrics: Vec<&str> = a.metrics.split(',').map(str::trim).collect();
    if let Some(m) = metrics.iter().find(|m| !matches!(**m, "corr" | "wasserstein")) {
        return Err(usage(format!("unknown metric {m:?}; expected corr or wasserstein")));
    }
    let file = load_model(&a.fit)?;
    let model = file.to_quad()?;
    let wall = file.wall.clone().unwrap_or_else(|| WallSpec::disabled(model.n()));
    let data = load_trajectory(&a.data)?;
    let mut cfg = CompareConfig::new(a.seed);
    cfg.sim_dt = a.sim_dt;
    cfg.length_multiplier = a.length;
    cfg.max_lag = a.max_lag;
    let cmp = compare_to_data(&model, &wall, &data.trajectory, &cfg)?;

    let mut body = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "model_kind": file.kind,
        "wall_activity": cmp.wall_activity,
    });
    if metrics.contains(&"wasserstein") {
        let rows: Vec<MarginalRow> = cmp
            .marginals
            .iter()
            .map(|m| MarginalRow {
                column: data.names[m.column].clone(),
                wasserstein1: m.wasserstein1,
                third_moment_data: m.third_moment_data,
                third_moment_model: m.third_moment_model,
            })
            .collect();
        for r in &rows {
            println!("{:<12} W1 = {:.6}", r.column, r.wasserstein1);
        }
        body["wasserstein"] = serde_json::to_value(rows)?;
    }
    if metrics.contains(&"corr") {
        let path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
        let mut text = String::from("tau,quantity,observed,model\n");
        for (tau, q, o, m) in cmp.correlation_rows() {
            text.push_str(&format!("{tau:.16e},{q:?},{o:.16e},{m:.16e}\n"));
        }
        std::fs::write(&path, text).map_err(Error::from)?;
        body["correlation_table"] = Value::String(
            path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        );
    }
    emit(&a.out, &body, header("compare", a)?)
}

fn cmd_preprocess(a: &PreprocessArgs) -> Outcome {
    let series = load_monthly(&a.data)?;
    let out = preprocess_enso(&series, a.window)?;
    let config = header("preprocess", a)?;
    let comment = format!(
        "{config}\nstart = {:04}-{:02}, one step per month",
        series.start_year, series.start_month
    );
    save_trajectory(&a.out, &out.trajectory, &out.names, Some(&comment))?;
    Ok(())
}
