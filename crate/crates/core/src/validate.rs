//! Parameter-recovery experiments on synthetic data.
//!
//! - [`run_table1`]: the two-dimensional quadratic benchmark, fitted with the
//!   nonlinear estimator matching its noise, summarized by median relative
//!   errors over independent realizations.
//! - [`run_lorenz`]: the stochastic Lorenz 63 system with colored noise.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::metrics::{abs_err, median, rel_err, third_central_moment, wasserstein_1d};
use crate::model::{NoiseSpec, QuadModel};
use crate::moments::{estimate_moments, forward_derivatives, DiffScheme, MomentOptions, MomentSet};
use crate::nonlinear::{colored_nlim_fit, white_nlim_fit, ConstraintSpec, FitReport, QRefine};
use crate::sim::{default_wall, simulate, SimPlan, Trajectory, WallSpec, DEFAULT_WALL_MULTIPLIER};

/// Independent stream ids: realization `r` uses `r`, the long reference run
/// uses `REFERENCE_STREAM`, refit simulations use `REFIT_STREAM_BASE + r`.
const REFERENCE_STREAM: u64 = 1 << 32;
const REFIT_STREAM_BASE: u64 = 1 << 33;

/// Seed for objective simulations of realization `r`.
fn refine_seed(seed: u64, r: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub noise: NoiseSpec,
    pub t_final: f64,
    pub realizations: usize,
    pub seed: u64,
    pub dt: f64,
    pub subsample: usize,
    /// Lags `0..=moment_lags` enter the absolute `K` and `M` errors.
    pub moment_lags: usize,
    /// Length of the reference and refit runs as a multiple of `t_final`;
    /// zero skips the absolute moment errors.
    pub reference_multiplier: f64,
    pub refine: QRefine,
    pub exec: Execution,
}

impl Table1Config {
    pub fn new(noise: NoiseSpec, t_final: f64, realizations: usize, seed: u64) -> Self {
        Self {
            noise,
            t_final,
            realizations,
            seed,
            dt: 0.001,
            subsample: 10,
            moment_lags: 20,
            reference_multiplier: 10.0,
            refine: QRefine::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationErrors {
    pub e_b: f64,
    pub e_a: f64,
    pub e_c: f64,
    pub e_q: f64,
    pub abs_k: Option<f64>,
    pub abs_m: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub e_b: f64,
    pub e_a: f64,
    pub e_c: f64,
    pub e_q: f64,
    pub abs_k: Option<f64>,
    pub abs_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub config: Table1Config,
    pub median: Medians,
    pub realizations: Vec<RealizationErrors>,
}

impl ErrorTable {
    pub fn to_text(&self) -> String {
        let label = match self.config.noise {
            NoiseSpec::White => "white".to_string(),
            NoiseSpec::Colored { gamma } => format!("colored (gamma = {gamma})"),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "noise: {label}, T_f = {}, realizations = {}, seed = {}",
            self.config.t_final,
            self.realizations.len(),
            self.config.seed
        );
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let m = &self.median;
        let _ = writeln!(s, "{:<12}{:>12}", "quantity", "median");
        for (name, v) in [("e_B", m.e_b), ("e_A", m.e_a), ("e_C", m.e_c), ("e_Q", m.e_q)] {
            let _ = writeln!(s, "{name:<12}{:>12}", pct(v));
        }
        let _ = writeln!(s, "{:<12}{:>12}", "E_K", opt(m.abs_k));
        let _ = writeln!(s, "{:<12}{:>12}", "E_M", opt(m.abs_m));
        s
    }
}

/// Lagged `K` and `M` stacked into one vector each.
fn stacked_moments(data: &Trajectory, lags: usize, exec: Execution) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut opts = MomentOptions::new(lags, 0);
    opts.exec = exec;
    let m = estimate_moments(data, opts)?;
    let k = m.k.iter().flat_map(|k| k.iter().copied()).collect();
    let mm = m.m.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok((k, mm))
}

/// Moments and derivatives used by every fitter in the experiments.
pub fn fit_inputs(data: &Trajectory, exec: Execution) -> Result<(MomentSet, crate::moments::DerivativeSet)> {
    let scheme = DiffScheme::Forward;
    let (first, second) = scheme.required_lags();
    let mut opts = MomentOptions::new(second, first);
    opts.exec = exec;
    let m = estimate_moments(data, opts)?;
    let d = forward_derivatives(&m, scheme)?;
    Ok((m, d))
}

fn fit_for(noise: NoiseSpec, data: &Trajectory, refine: &QRefine, exec: Execution) -> Result<FitReport> {
    let (m, d) = fit_inputs(data, exec)?;
    match noise {
        NoiseSpec::White => white_nlim_fit(&m, &d, None),
        NoiseSpec::Colored { gamma } => {
            let mut refine = refine.clone();
            if refine.wall.is_none() {
                refine.wall = Some(default_wall(data, DEFAULT_WALL_MULTIPLIER)?);
            }
            colored_nlim_fit(&m, &d, gamma, None, &refine, data.duration())
        }
    }
}

fn model_errors(truth: &QuadModel, fit: &QuadModel) -> Result<[f64; 4]> {
    Ok([
        rel_err(truth.b.as_matrix().as_slice(), fit.b.as_matrix().as_slice())?,
        rel_err(truth.a.as_slice(), fit.a.as_slice())?,
        rel_err(truth.c.as_slice(), fit.c.as_slice())?,
        rel_err(truth.q.matrix().as_slice(), fit.q.matrix().as_slice())?,
    ])
}

pub fn run_table1(cfg: &Table1Config) -> Result<ErrorTable> {
    if cfg.realizations == 0 {
        return Err(Error::InvalidParameter("at least one realization is required".into()));
    }
    let truth = QuadModel::two_dimensional_benchmark(cfg.noise);
    let n = truth.n();
    let reference_len = cfg.reference_multiplier * cfg.t_final;
    let reference = if reference_len > 0.0 {
        let plan = SimPlan::new(n, cfg.dt, reference_len, cfg.subsample, cfg.seed).with_stream(REFERENCE_STREAM);
        let out = simulate(&truth, &WallSpec::disabled(n), &plan)?;
        Some(stacked_moments(&out.trajectory, cfg.moment_lags, cfg.exec)?)
    } else {
        None
    };

    let rows = map_indexed(cfg.realizations, cfg.exec, |r| -> Result<RealizationErrors> {
        let plan = SimPlan::new(n, cfg.dt, cfg.t_final, cfg.subsample, cfg.seed).with_stream(r as u64);
        let data = simulate(&truth, &WallSpec::disabled(n), &plan)?.trajectory;
        let mut refine = cfg.refine.clone();
        refine.seed = refine_seed(cfg.seed, r as u64);
        let fit = fit_for(cfg.noise, &data, &refine, cfg.exec)?;
        let [e_b, e_a, e_c, e_q] = model_errors(&truth, &fit.model)?;
        let (abs_k, abs_m) = match &reference {
            Some((k_ref, m_ref)) => {
                let wall = default_wall(&data, DEFAULT_WALL_MULTIPLIER)?;
                let plan = SimPlan::new(n, cfg.dt, reference_len, cfg.subsample, cfg.seed)
                    .with_stream(REFIT_STREAM_BASE + r as u64);
                match simulate(&fit.model, &wall, &plan) {
                    Ok(out) => {
                        let (k, m) = stacked_moments(&out.trajectory, cfg.moment_lags, cfg.exec)?;
                        (Some(abs_err(k_ref, &k)?), Some(abs_err(m_ref, &m)?))
                    }
                    Err(_) => (Some(f64::INFINITY), Some(f64::INFINITY)),
                }
            }
            None => (None, None),
        };
        Ok(RealizationErrors {
            e_b,
            e_a,
            e_c,
            e_q,
            abs_k,
            abs_m,
            warnings: fit.warnings,
        })
    });
    let realizations: Vec<RealizationErrors> = rows.into_iter().collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&RealizationErrors) -> f64| -> Result<f64> {
        median(&realizations.iter().map(f).collect::<Vec<_>>())
    };
    let opt_col = |f: &dyn Fn(&RealizationErrors) -> Option<f64>| -> Result<Option<f64>> {
        let v: Option<Vec<f64>> = realizations.iter().map(f).collect();
        v.map(|v| median(&v)).transpose()
    };
    let median = Medians {
        e_b: col(&|r| r.e_b)?,
        e_a: col(&|r| r.e_a)?,
        e_c: col(&|r| r.e_c)?,
        e_q: col(&|r| r.e_q)?,
        abs_k: opt_col(&|r| r.abs_k)?,
        abs_m: opt_col(&|r| r.abs_m)?,
    };
    Ok(ErrorTable {
        config: cfg.clone(),
        median,
        realizations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Recording interval in integration steps.
    pub subsample: usize,
    pub restricted: bool,
    pub seed: u64,
    pub refine: QRefine,
    pub exec: Execution,
}

impl LorenzConfig {
    pub fn new(t_final: f64, restricted: bool, subsample: usize, seed: u64) -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            gamma: 0.5,
            t_final,
            dt: 0.001,
            subsample,
            restricted,
            seed,
            refine: QRefine::default(),
            exec: Execution::default(),
        }
    }
}

/// Named Lorenz parameters read from a fitted model. `a33` is the raw
/// `A[2,2]` entry (the true value is `-beta`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzEstimate {
    pub sigma: f64,
    pub rho: f64,
    pub a33: f64,
    pub b213: f64,
    pub b312: f64,
}

impl LorenzEstimate {
    pub fn from_model(model: &QuadModel) -> Self {
        Self {
            sigma: -model.a[(0, 0)],
            rho: model.a[(1, 0)],
            a33: model.a[(2, 2)],
            b213: model.b.get(1, 0, 2),
            b312: model.b.get(2, 0, 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LorenzRun {
    pub config: LorenzConfig,
    pub estimate: LorenzEstimate,
    pub report: FitReport,
}

pub fn run_lorenz(cfg: &LorenzConfig) -> Result<LorenzRun> {
    let noise = NoiseSpec::colored(cfg.gamma)?;
    let truth = QuadModel::lorenz63(cfg.sigma, cfg.rho, cfg.beta, noise);
    let plan = SimPlan::new(3, cfg.dt, cfg.t_final, cfg.subsample, cfg.seed).with_initial_state(vec![1.0, 1.0, 20.0]);
    let data = simulate(&truth, &WallSpec::disabled(3), &plan)?.trajectory;
    let (m, d) = fit_inputs(&data, cfg.exec)?;
    let spec = cfg.restricted.then(ConstraintSpec::lorenz_restriction);
    let mut refine = cfg.refine.clone();
    refine.seed = refine_seed(cfg.seed, 0);
    if refine.wall.is_none() {
        refine.wall = Some(default_wall(&data, DEFAULT_WALL_MULTIPLIER)?);
    }
    let report = colored_nlim_fit(&m, &d, cfg.gamma, spec.as_ref(), &refine, data.duration())?;
    Ok(LorenzRun {
        config: cfg.clone(),
        estimate: LorenzEstimate::from_model(&report.model),
        report,
    })
}

impl LorenzRun {
    pub fn to_text(&self) -> String {
        let e = &self.estimate;
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "restricted = {}, subsample = {}, T_f = {}, seed = {}",
            c.restricted, c.subsample, c.t_final, c.seed
        );
        let _ = writeln!(s, "{:<10}{:>12}{:>12}", "parameter", "estimate", "true");
        for (name, est, truth) in [
            ("sigma", e.sigma, c.sigma),
            ("rho", e.rho, c.rho),
            ("A33", e.a33, -c.beta),
            ("B213", e.b213, -1.0),
            ("B312", e.b312, 1.0),
        ] {
            let _ = writeln!(s, "{name:<10}{est:>12.4}{truth:>12.4}");
        }
        s
    }
}

/// Settings for scoring a fitted model against observed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub seed: u64,
    /// Integration step; `None` uses a tenth of the data sampling interval.
    pub sim_dt: Option<f64>,
    /// Simulated duration as a multiple of the data duration.
    pub length_multiplier: f64,
    /// Largest lag (in samples) of the reported correlation functions.
    pub max_lag: usize,
    pub exec: Execution,
}

impl CompareConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sim_dt: None,
            length_multiplier: 10.0,
            max_lag: 24,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub column: usize,
    pub wasserstein1: f64,
    pub third_moment_data: f64,
    pub third_moment_model: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub marginals: Vec<MarginalComparison>,
    pub observed: MomentSet,
    pub model: MomentSet,
    pub wall_activity: f64,
}

impl Comparison {
    /// Long-format rows `(tau, quantity, observed, model)` over the unique
    /// entries of `K` and of `M` (pairs `j <= k`).
    pub fn correlation_rows(&self) -> Vec<(f64, String, f64, f64)> {
        let n = self.observed.n;
        let mut rows = Vec::new();
        for lag in 0..self.observed.k.len().min(self.model.k.len()) {
            let tau = lag as f64 * self.observed.dt;
            for i in 0..n {
                for j in 0..n {
                    rows.push((tau, format!("K[{i},{j}]"), self.observed.k[lag][(i, j)], self.model.k[lag][(i, j)]));
                }
            }
            for i in 0..n {
                for (j, k) in crate::tensor::pairs(n) {
                    rows.push((
                        tau,
                        format!("M[{i},{j},{k}]"),
                        self.observed.m[lag].get(&[i, j, k]),
                        self.model.m[lag].get(&[i, j, k]),
                    ));
                }
            }
        }
        rows
    }
}

/// Simulates `model` at the data sampling interval and compares marginal
/// distributions and lagged moments with `data`.
pub fn compare_to_data(model: &QuadModel, wall: &WallSpec, data: &Trajectory, cfg: &CompareConfig) -> Result<Comparison> {
    if model.n() != data.n {
        return Err(Error::DimensionMismatch(format!(
            "model has n = {}, data has {} columns",
            model.n(),
            data.n
        )));
    }
    let sim_dt = cfg.sim_dt.unwrap_or(data.dt / 10.0);
    let ratio = data.dt / sim_dt;
    let subsample = ratio.round() as usize;
    if subsample == 0 || (ratio - subsample as f64).abs() > 1e-9 * ratio {
        return Err(Error::InvalidParameter(format!(
            "simulation step {sim_dt} does not divide the sampling interval {}",
            data.dt
        )));
    }
    let plan = SimPlan::new(model.n(), sim_dt, cfg.length_multiplier * data.duration(), subsample, cfg.seed)
        .with_initial_state(data.mean().iter().copied().collect());
    let out = simulate(model, wall, &plan)?;
    let sim = out.trajectory;
    let mut opts = MomentOptions::new(cfg.max_lag, 0);
    opts.exec = cfg.exec;
    let observed = estimate_moments(data, opts)?;
    let simulated = estimate_moments(&sim, opts)?;
    let marginals = (0..data.n)
        .map(|i| {
            let (x, y) = (data.column(i), sim.column(i));
            Ok(MarginalComparison {
                column: i,
                wasserstein1: wasserstein_1d(&x, &y, 1.0)?,
                third_moment_data: third_central_moment(&x)?,
                third_moment_model: third_central_moment(&y)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison {
        marginals,
        observed,
        model: simulated,
        wall_activity: out.wall_activity,
    })
}
