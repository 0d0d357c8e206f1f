//! Nonlinear (quadratic) inverse models.
//!
//! Every output row `i` shares one square design over the unknowns
//! `theta_i = [b_i(j<=k); a_i(j); c_i]`, built from lag-zero moments and
//! their derivatives:
//!
//! - mean balance: `<f_i> = 0`;
//! - one row per `q`: the first derivative of `K_iq`;
//! - one row per `q <= r`: the first derivative of `M_iqr`.
//!
//! For colored noise the unknown noise-state correlations are eliminated by
//! combining each relation with its time derivative, which leaves a system in
//! `(B, A, C)` alone. `Q` is then obtained in closed form and refined by
//! matching simulated lag-zero moments.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{
    constrained_least_squares, nearest_psd, solve_square, spd_sqrt, ParameterMap, SpdMatrix, CONDITION_WARN,
    DEFAULT_EIGEN_TOL,
};
use crate::model::{NoiseSpec, QuadModel};
use crate::moments::{lag_zero_moments, DerivativeSet, MomentSet};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sim::{simulate, BurnIn, SimPlan, WallSpec, DEFAULT_WALL_STEEPNESS};
use crate::tensor::{contract_tail_pair, pair_count, pairs, sym, QuadTensor, Tensor};

/// Unknowns per output row: `n(n+1)/2 + n + 1`.
pub fn unknowns_per_row(n: usize) -> usize {
    pair_count(n) + n + 1
}

// ---------------------------------------------------------------------------
// Constraints

/// Treatment of one coefficient during estimation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Free,
    Zero,
    Fixed(f64),
    /// Shares one unknown with the other members of `group`, multiplied by
    /// `sign` (`+1` or `-1`).
    Tied { group: u32, sign: f64 },
}

/// Coefficient address in `(B, A, C)`. `B` addresses need `j <= k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coef {
    B(usize, usize, usize),
    A(usize, usize),
    C(usize),
}

impl Coef {
    /// Position in the stacked parameter vector (`row * d + column`).
    pub fn position(&self, n: usize) -> usize {
        let d = unknowns_per_row(n);
        match *self {
            Coef::B(i, j, k) => i * d + crate::tensor::pair_index(n, j, k),
            Coef::A(i, j) => i * d + pair_count(n) + j,
            Coef::C(i) => i * d + pair_count(n) + n,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let ok = match *self {
            Coef::B(i, j, k) => i < n && j <= k && k < n,
            Coef::A(i, j) => i < n && j < n,
            Coef::C(i) => i < n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("coefficient {self} out of range for n = {n}")))
        }
    }
}

impl std::fmt::Display for Coef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coef::B(i, j, k) => write!(f, "B[{i},{j},{k}]"),
            Coef::A(i, j) => write!(f, "A[{i},{j}]"),
            Coef::C(i) => write!(f, "C[{i}]"),
        }
    }
}

impl std::str::FromStr for Coef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad coefficient address {s:?}"));
        let s = s.trim();
        let (head, rest) = s.split_at(1.min(s.len()));
        let inner = rest
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let idx: Vec<usize> = inner
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (head, idx.as_slice()) {
            ("B", &[i, j, k]) => Ok(Coef::B(i, j, k)),
            ("A", &[i, j]) => Ok(Coef::A(i, j)),
            ("C", &[i]) => Ok(Coef::C(i)),
            _ => Err(bad()),
        }
    }
}

/// Per-coefficient markers; coefficients not listed take `default`.
/// Addresses are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub n: usize,
    pub default: Marker,
    pub entries: BTreeMap<String, Marker>,
}

impl ConstraintSpec {
    pub fn all_free(n: usize) -> Self {
        Self {
            n,
            default: Marker::Free,
            entries: BTreeMap::new(),
        }
    }

    pub fn with_default(n: usize, default: Marker) -> Self {
        Self {
            n,
            default,
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, coef: Coef, marker: Marker) -> &mut Self {
        self.entries.insert(coef.to_string(), marker);
        self
    }

    /// Lorenz 63 structure: only `B[1,0,2]`, `B[2,0,1]`, `A[1,0]`, `A[1,1]`,
    /// `A[2,2]` are free, and `A[0,0] = -A[0,1]`; everything else is zero.
    pub fn lorenz_restriction() -> Self {
        let mut spec = Self::with_default(3, Marker::Zero);
        spec.set(Coef::B(1, 0, 2), Marker::Free)
            .set(Coef::B(2, 0, 1), Marker::Free)
            .set(Coef::A(0, 0), Marker::Tied { group: 0, sign: -1.0 })
            .set(Coef::A(0, 1), Marker::Tied { group: 0, sign: 1.0 })
            .set(Coef::A(1, 0), Marker::Free)
            .set(Coef::A(1, 1), Marker::Free)
            .set(Coef::A(2, 2), Marker::Free);
        spec
    }

    fn resolved(&self) -> Result<Vec<Marker>> {
        let n = self.n;
        let mut markers = vec![self.default; n * unknowns_per_row(n)];
        for (addr, marker) in &self.entries {
            let coef: Coef = addr.parse()?;
            coef.check(n)?;
            markers[coef.position(n)] = *marker;
        }
        Ok(markers)
    }
}

/// Affine map from the free unknowns to the stacked `(B, A, C)` vector.
pub fn apply_constraints(spec: &ConstraintSpec) -> Result<ParameterMap> {
    let markers = spec.resolved()?;
    let full = markers.len();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut groups: HashMap<u32, usize> = HashMap::new();
    let mut group_sizes: BTreeMap<u32, usize> = BTreeMap::new();
    let mut offset = DVector::zeros(full);
    for (pos, marker) in markers.iter().enumerate() {
        match *marker {
            Marker::Free => columns.push(vec![(pos, 1.0)]),
            Marker::Zero => {}
            Marker::Fixed(v) => offset[pos] = v,
            Marker::Tied { group, sign } => {
                if sign != 1.0 && sign != -1.0 {
                    return Err(Error::RankDeficientMap(format!(
                        "tie group {group} has sign {sign}; expected +1 or -1"
                    )));
                }
                let col = *groups.entry(group).or_insert_with(|| {
                    columns.push(Vec::new());
                    columns.len() - 1
                });
                columns[col].push((pos, sign));
                *group_sizes.entry(group).or_default() += 1;
            }
        }
    }
    if let Some((g, _)) = group_sizes.iter().find(|(_, c)| **c < 2) {
        return Err(Error::RankDeficientMap(format!("tie group {g} has a single member")));
    }
    if columns.is_empty() {
        return Err(Error::EmptyFreeSet);
    }
    let mut map = DMatrix::zeros(full, columns.len());
    for (c, entries) in columns.iter().enumerate() {
        for &(pos, s) in entries {
            map[(pos, c)] = s;
        }
    }
    Ok(ParameterMap { map, offset })
}

// ---------------------------------------------------------------------------
// Moment systems

/// Square moment system shared by all output rows: `design * Theta = targets`,
/// with column `i` of `Theta` holding `theta_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSystem {
    pub design: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl MomentSystem {
    fn new(n: usize) -> Self {
        let d = unknowns_per_row(n);
        Self {
            design: DMatrix::zeros(d, d),
            targets: DMatrix::zeros(d, n),
        }
    }

    /// Residual Frobenius norms of the mean, `K` and `M` row blocks.
    pub fn block_residuals(&self, theta: &DMatrix<f64>) -> BlockResiduals {
        let n = self.targets.ncols();
        let r = &self.design * theta - &self.targets;
        BlockResiduals {
            mean: r.rows(0, 1).norm(),
            second_order: r.rows(1, n).norm(),
            third_order: r.rows(1 + n, pair_count(n)).norm(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockResiduals {
    pub mean: f64,
    pub second_order: f64,
    pub third_order: f64,
}

fn check_inputs(m: &MomentSet, d: &DerivativeSet) -> Result<()> {
    if m.k.is_empty() || m.m.is_empty() || m.s.is_empty() {
        return Err(Error::InsufficientLags { needed: 0, have: 0 });
    }
    let n = m.n;
    if d.k1.nrows() != n || d.m1.n() != n || d.s1.n() != n || m.mean.len() != n {
        return Err(Error::DimensionMismatch("moments and derivatives disagree on n".into()));
    }
    Ok(())
}

fn fill_row(
    sys: &mut MomentSystem,
    row: usize,
    n: usize,
    b_feat: impl Fn(usize, usize) -> f64,
    a_feat: impl Fn(usize) -> f64,
    c_feat: f64,
    target: impl Fn(usize) -> f64,
) {
    let p = pair_count(n);
    for (col, (j, k)) in pairs(n).enumerate() {
        sys.design[(row, col)] = b_feat(j, k);
    }
    for j in 0..n {
        sys.design[(row, p + j)] = a_feat(j);
    }
    sys.design[(row, p + n)] = c_feat;
    for i in 0..n {
        sys.targets[(row, i)] = target(i);
    }
}

fn mean_row(sys: &mut MomentSystem, m: &MomentSet) {
    let n = m.n;
    let k0 = &m.k[0];
    fill_row(sys, 0, n, |j, k| k0[(j, k)], |j| m.mean[j], 1.0, |_| 0.0);
}

/// White-noise system from `E`, `K(0)`, `M(0)`, `S(0)`, `K'(0)`, `M'(0)`.
pub fn assemble_white_system(m: &MomentSet, d: &DerivativeSet) -> Result<MomentSystem> {
    check_inputs(m, d)?;
    let n = m.n;
    let (k0, m0, s0) = (&m.k[0], &m.m[0], &m.s[0]);
    let mut sys = MomentSystem::new(n);
    mean_row(&mut sys, m);
    for q in 0..n {
        fill_row(
            &mut sys,
            1 + q,
            n,
            |j, k| m0.get(&[j, k, q]),
            |j| k0[(j, q)],
            m.mean[q],
            |i| d.k1[(i, q)],
        );
    }
    for (p, (q, r)) in pairs(n).enumerate() {
        fill_row(
            &mut sys,
            1 + n + p,
            n,
            |j, k| s0.get(&[j, k, q, r]),
            |j| m0.get(&[j, q, r]),
            k0[(q, r)],
            |i| d.m1.get(&[i, q, r]),
        );
    }
    Ok(sys)
}

/// Colored-noise system with the noise-state correlations eliminated.
pub fn assemble_colored_system(m: &MomentSet, d: &DerivativeSet, gamma: f64) -> Result<MomentSystem> {
    NoiseSpec::colored(gamma)?;
    check_inputs(m, d)?;
    let n = m.n;
    let g = 1.0 / gamma;
    let (k0, m0, s0) = (&m.k[0], &m.m[0], &m.s[0]);
    let mut sys = MomentSystem::new(n);
    mean_row(&mut sys, m);
    for q in 0..n {
        fill_row(
            &mut sys,
            1 + q,
            n,
            |j, k| d.m1.get(&[j, k, q]) + d.m1.get(&[k, j, q]) + g * m0.get(&[j, k, q]),
            |j| d.k1[(j, q)] + g * k0[(j, q)],
            g * m.mean[q],
            |i| d.k2[(i, q)] + g * d.k1[(i, q)],
        );
    }
    for (p, (q, r)) in pairs(n).enumerate() {
        fill_row(
            &mut sys,
            1 + n + p,
            n,
            |j, k| d.s1.get(&[j, k, q, r]) + d.s1.get(&[k, j, q, r]) + g * s0.get(&[j, k, q, r]),
            |j| d.m1.get(&[j, q, r]) + g * m0.get(&[j, q, r]),
            g * k0[(q, r)],
            |i| d.m2.get(&[i, q, r]) + g * d.m1.get(&[i, q, r]),
        );
    }
    Ok(sys)
}

fn unpack(theta: &DMatrix<f64>, n: usize) -> (QuadTensor, DMatrix<f64>, DVector<f64>) {
    let p = pair_count(n);
    let b = QuadTensor::from_matrix(theta.rows(0, p).transpose()).expect("shape");
    let a = theta.rows(p, n).transpose();
    let c = theta.row(p + n).transpose();
    (b, a, c)
}

/// Solution of a moment system with its diagnostics.
#[derive(Clone, Debug)]
pub struct DriftFit {
    pub b: QuadTensor,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub condition: f64,
    pub least_squares: bool,
    pub residuals: BlockResiduals,
    pub warnings: Vec<String>,
}

/// Solve directly when unconstrained and well conditioned, otherwise by
/// (constrained) least squares.
pub fn solve_system(sys: &MomentSystem, constraints: Option<&ConstraintSpec>) -> Result<DriftFit> {
    let n = sys.targets.ncols();
    let d = unknowns_per_row(n);
    let mut warnings = Vec::new();
    let (theta, condition, least_squares) = match constraints {
        Some(spec) => {
            if spec.n != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraints are for n = {}, data has n = {n}",
                    spec.n
                )));
            }
            let map = apply_constraints(spec)?;
            let sol = constrained_least_squares(&sys.design, &sys.targets, &map)?;
            if sol.rank_deficient {
                warnings.push("constrained design is rank deficient; minimum-norm solution used".into());
            }
            (sol.full, sol.condition, true)
        }
        None => {
            let direct = solve_square(&sys.design, &sys.targets);
            match direct {
                Ok((theta, cond)) if cond <= CONDITION_WARN && theta.iter().all(|v| v.is_finite()) => {
                    (theta, cond, false)
                }
                _ => {
                    let sol = constrained_least_squares(&sys.design, &sys.targets, &ParameterMap::identity(d * n))?;
                    warnings.push(format!(
                        "design condition number {:.3e} exceeds {:.0e}; solved by least squares",
                        sol.condition, CONDITION_WARN
                    ));
                    (sol.full, sol.condition, true)
                }
            }
        }
    };
    let residuals = sys.block_residuals(&theta);
    let (b, a, c) = unpack(&theta, n);
    Ok(DriftFit {
        b,
        a,
        c,
        condition,
        least_squares,
        residuals,
        warnings,
    })
}

/// `B x2 M(0) + A K(0) + C E^T`.
pub fn drift_state_covariance(b: &QuadTensor, a: &DMatrix<f64>, c: &DVector<f64>, m: &MomentSet) -> Result<DMatrix<f64>> {
    Ok(b.contract3(&m.m[0])? + a * &m.k[0] + c * m.mean.transpose())
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentMatch {
    pub k0: f64,
    pub m0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColoredDiagnostics {
    /// `<eta x^T>` from the final objective simulation.
    pub k_eta_x: DMatrix<f64>,
    /// `<eta_i x_j x_k>` from the final objective simulation.
    pub m_eta_x: Tensor,
    pub g: DMatrix<f64>,
    pub h: Tensor,
    pub q0: DMatrix<f64>,
    pub objective_q0: f64,
    pub objective: f64,
    pub wall_activity: f64,
    pub objective_trace: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub refined: bool,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub model: QuadModel,
    pub condition: f64,
    pub least_squares: bool,
    pub residuals: BlockResiduals,
    pub moment_match: Option<MomentMatch>,
    pub diagnostics: Option<ColoredDiagnostics>,
    pub warnings: Vec<String>,
}

fn spd_policy(q: DMatrix<f64>, warnings: &mut Vec<String>) -> Result<SpdMatrix> {
    let q = SpdMatrix::with_tolerance(q, DEFAULT_EIGEN_TOL)?;
    if q.was_clipped() {
        warnings.push(format!("Q eigenvalue {:.3e} clipped", q.min_eigenvalue()));
    }
    Ok(q)
}

pub fn white_nlim_fit(m: &MomentSet, d: &DerivativeSet, constraints: Option<&ConstraintSpec>) -> Result<FitReport> {
    let sys = assemble_white_system(m, d)?;
    let fit = solve_system(&sys, constraints)?;
    let mut warnings = fit.warnings.clone();
    let balance = drift_state_covariance(&fit.b, &fit.a, &fit.c, m)?;
    let q = spd_policy(sym(&balance) * -0.5, &mut warnings)?;
    let model = QuadModel::new(fit.b, fit.a, fit.c, q, NoiseSpec::White)?;
    Ok(FitReport {
        model,
        condition: fit.condition,
        least_squares: fit.least_squares,
        residuals: fit.residuals,
        moment_match: None,
        diagnostics: None,
        warnings,
    })
}

/// Closed-form colored-noise `Q` from fitted drift terms.
#[derive(Clone, Debug)]
pub struct ColoredQ0 {
    pub q0: SpdMatrix,
    /// `sqrt(2Q) <eta x^T>` implied by the moments.
    pub g: DMatrix<f64>,
    /// `sqrt(2Q) <eta x x>` implied by the moments.
    pub h: Tensor,
    pub warnings: Vec<String>,
}

pub fn colored_q0(
    m: &MomentSet,
    d: &DerivativeSet,
    b: &QuadTensor,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    gamma: f64,
) -> Result<ColoredQ0> {
    let (q_raw, g, h) = colored_q0_raw(m, d, b, a, c, gamma)?;
    let mut warnings = Vec::new();
    let q0 = spd_policy(q_raw, &mut warnings)?;
    Ok(ColoredQ0 { q0, g, h, warnings })
}

/// Symmetric part of the closed-form `Q` before the SPD policy, with `G` and
/// `H`.
fn colored_q0_raw(
    m: &MomentSet,
    d: &DerivativeSet,
    b: &QuadTensor,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    gamma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Tensor)> {
    NoiseSpec::colored(gamma)?;
    let g = &d.k1 - drift_state_covariance(b, a, c, m)?;
    let k0t = Tensor::from_matrix(&m.k[0]);
    let h = d
        .m1
        .sub(&b.contract(&m.s[0])?)
        .sub(&m.m[0].mode1(a))
        .sub(&Tensor::outer_vector(c, &k0t));
    let q_raw = &g - (contract_tail_pair(&h, b)? + &g * a.transpose()) * gamma;
    Ok(((&q_raw + q_raw.transpose()) * 0.5, g, h))
}

// ---------------------------------------------------------------------------
// Q refinement

/// Settings for the simulation-based `Q` refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRefine {
    pub enabled: bool,
    pub seed: u64,
    /// Integration step; `None` uses a tenth of the data sampling interval.
    pub sim_dt: Option<f64>,
    /// Simulated duration; `None` uses `max(10 x data duration, 2000)`.
    pub sim_length: Option<f64>,
    /// Evaluation budget; `None` uses `200 x dim`.
    pub max_evals: Option<usize>,
    pub rel_tol: f64,
    /// Wall for objective simulations; `None` builds one from the moments.
    pub wall: Option<WallSpec>,
    pub exec: Execution,
}

impl Default for QRefine {
    fn default() -> Self {
        Self {
            enabled: true,
            seed: 0,
            sim_dt: None,
            sim_length: None,
            max_evals: None,
            rel_tol: 1e-6,
            wall: None,
            exec: Execution::default(),
        }
    }
}

impl QRefine {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Resolved simulation settings for objective evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSim {
    pub dt: f64,
    pub length: f64,
    pub subsample: usize,
    pub seed: u64,
    pub wall: WallSpec,
}

impl ObjectiveSim {
    /// Fill the defaults of `cfg` from the observed moments and the duration
    /// of the data they came from.
    pub fn resolve(cfg: &QRefine, m: &MomentSet, data_duration: f64) -> Result<Self> {
        let dt = cfg.sim_dt.unwrap_or(m.dt / 10.0);
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("objective simulation step {dt}")));
        }
        let length = cfg.sim_length.unwrap_or((10.0 * data_duration).max(2000.0));
        let subsample = ((m.dt / dt).round() as usize).max(1);
        let wall = match &cfg.wall {
            Some(w) => w.clone(),
            None => moment_wall(m)?,
        };
        Ok(Self {
            dt,
            length,
            subsample,
            seed: cfg.seed,
            wall,
        })
    }
}

/// Wall centred on the mean with radius 25 standard deviations (of the
/// total variance), used when no data-based wall is supplied.
pub fn moment_wall(m: &MomentSet) -> Result<WallSpec> {
    let cov = &m.k[0] - &m.mean * m.mean.transpose();
    let spread = cov.trace().max(0.0).sqrt();
    let radius = if spread > 0.0 { 25.0 * spread } else { 1.0 };
    WallSpec::new(m.mean.iter().copied().collect(), radius, DEFAULT_WALL_STEEPNESS)
}

/// Lag-zero summary of one objective simulation.
#[derive(Clone, Debug)]
pub struct SimSummary {
    pub k0: DMatrix<f64>,
    pub m0: Tensor,
    pub k_eta_x: DMatrix<f64>,
    pub m_eta_x: Tensor,
    pub wall_activity: f64,
}

pub fn simulate_summary(model: &QuadModel, m_obs: &MomentSet, sim: &ObjectiveSim) -> Result<SimSummary> {
    let n = model.n();
    let plan = SimPlan::new(n, sim.dt, sim.length, sim.subsample, sim.seed)
        .with_initial_state(m_obs.mean.iter().copied().collect())
        .with_noise_recording(true)
        .with_burn_in(BurnIn::Auto);
    let out = simulate(model, &sim.wall, &plan)?;
    let traj = &out.trajectory;
    let (_, k0, m0) = lag_zero_moments(traj)?;
    let mut k_eta_x = DMatrix::zeros(n, n);
    let mut m_eta_x = Tensor::zeros(n, 3);
    if traj.noise.is_some() {
        let mut acc_k = vec![0.0; n * n];
        let mut acc_m = vec![0.0; n * n * n];
        for t in 0..traj.len() {
            let x = traj.row(t);
            let eta = traj.noise_row(t).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let ex = eta[i] * x[j];
                    acc_k[i * n + j] += ex;
                    for k in 0..n {
                        acc_m[(i * n + j) * n + k] += ex * x[k];
                    }
                }
            }
        }
        let len = traj.len() as f64;
        k_eta_x = DMatrix::from_fn(n, n, |i, j| acc_k[i * n + j] / len);
        m_eta_x = Tensor::from_vec(n, 3, acc_m.into_iter().map(|v| v / len).collect())?;
    }
    Ok(SimSummary {
        k0,
        m0,
        k_eta_x,
        m_eta_x,
        wall_activity: out.wall_activity,
    })
}

/// `||R||_F + ||K_sim(0) - K_obs(0)||_F + ||M_sim(0) - M_obs(0)||_F` with
/// `R = Sym(B x2 M_obs(0) + A K_obs(0) + C E_obs^T + sqrt(2Q) K_eta_x)`.
pub fn objective_from_summary(model: &QuadModel, m_obs: &MomentSet, s: &SimSummary) -> Result<f64> {
    let root = spd_sqrt(&SpdMatrix::new(model.q.matrix() * 2.0)?);
    let balance = drift_state_covariance(&model.b, &model.a, &model.c, m_obs)? + root * &s.k_eta_x;
    let r = sym(&balance).norm();
    let dk = (&s.k0 - &m_obs.k[0]).norm();
    let dm = s.m0.sub(&m_obs.m[0]).frobenius_norm();
    Ok(r + dk + dm)
}

/// Objective for a candidate `Q`; a diverging simulation scores `+inf`.
pub fn colored_q_objective(candidate: &QuadModel, m_obs: &MomentSet, sim: &ObjectiveSim) -> f64 {
    match simulate_summary(candidate, m_obs, sim).and_then(|s| objective_from_summary(candidate, m_obs, &s)) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => f64::INFINITY,
        Err(e) => {
            log::debug!("objective evaluation failed: {e}");
            f64::INFINITY
        }
    }
}

const CHOL_FLOOR: f64 = 1e-8;

fn chol_params(q: &SpdMatrix) -> Vec<f64> {
    let n = q.n();
    let mut m = q.matrix().clone();
    // Nudge a clipped (semidefinite) Q so the factorization exists.
    for i in 0..n {
        m[(i, i)] += CHOL_FLOOR * CHOL_FLOOR;
    }
    let l = m.cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(n, n) * CHOL_FLOOR);
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(l[(i, j)]);
        }
    }
    out
}

fn q_from_params(p: &[f64], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut it = p.iter();
    for i in 0..n {
        for j in 0..=i {
            let v = *it.next().unwrap();
            l[(i, j)] = if i == j { v.abs().max(CHOL_FLOOR) } else { v };
        }
    }
    &l * l.transpose()
}

fn with_q(base: &QuadModel, q: DMatrix<f64>) -> Result<QuadModel> {
    let q = SpdMatrix::new((&q + q.transpose()) * 0.5)?;
    QuadModel::new(base.b.clone(), base.a.clone(), base.c.clone(), q, base.noise)
}

/// Colored-noise nonlinear fit. `data_duration` sets the default objective
/// simulation length.
pub fn colored_nlim_fit(
    m: &MomentSet,
    d: &DerivativeSet,
    gamma: f64,
    constraints: Option<&ConstraintSpec>,
    refine: &QRefine,
    data_duration: f64,
) -> Result<FitReport> {
    let noise = NoiseSpec::colored(gamma)?;
    let sys = assemble_colored_system(m, d, gamma)?;
    let fit = solve_system(&sys, constraints)?;
    let mut warnings = fit.warnings.clone();
    let q0 = match colored_q0(m, d, &fit.b, &fit.a, &fit.c, gamma) {
        Ok(q0) => q0,
        Err(Error::IndefiniteBeyondTolerance { eigenvalues, .. }) => {
            let raw = colored_q0_raw(m, d, &fit.b, &fit.a, &fit.c, gamma)?;
            let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            warnings.push(format!(
                "closed-form Q is indefinite (eigenvalues {eigenvalues:?}); projected to the nearest positive definite matrix"
            ));
            ColoredQ0 {
                q0: nearest_psd(&raw.0, 1e-6 * scale)?,
                g: raw.1,
                h: raw.2,
                warnings: Vec::new(),
            }
        }
        Err(e) => return Err(e),
    };
    warnings.extend(q0.warnings.iter().cloned());
    let base = QuadModel::new(fit.b.clone(), fit.a.clone(), fit.c.clone(), q0.q0.clone(), noise)?;
    let n = m.n;

    let sim = ObjectiveSim::resolve(refine, m, data_duration)?;
    let (model, summary, objective_q0, objective, trace, evaluations, converged) = if refine.enabled {
        let x0 = chol_params(&q0.q0);
        let dim = x0.len();
        let mut opts = NelderMeadOptions::for_dim(dim);
        if let Some(me) = refine.max_evals {
            opts.max_evals = me;
        }
        opts.rel_tol = refine.rel_tol;
        opts.exec = refine.exec;
        let f = |p: &[f64]| match with_q(&base, q_from_params(p, n)) {
            Ok(model) => colored_q_objective(&model, m, &sim),
            Err(_) => f64::INFINITY,
        };
        let objective_q0 = f(&x0);
        let res = nelder_mead(f, &x0, &opts);
        let (best_x, best_v) = if res.value <= objective_q0 {
            (res.x.clone(), res.value)
        } else {
            (x0.clone(), objective_q0)
        };
        let model = with_q(&base, q_from_params(&best_x, n))?;
        let summary = simulate_summary(&model, m, &sim).ok();
        if !res.converged {
            warnings.push(format!(
                "Q refinement stopped after {} evaluations without meeting the tolerance",
                res.evals
            ));
        }
        (model, summary, objective_q0, best_v, res.trace, res.evals + 1, res.converged)
    } else {
        let summary = simulate_summary(&base, m, &sim).ok();
        let v = match &summary {
            Some(s) => objective_from_summary(&base, m, s).unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        };
        (base.clone(), summary, v, v, vec![v], 1, true)
    };

    let (k_eta_x, m_eta_x, wall_activity, moment_match) = match &summary {
        Some(s) => (
            s.k_eta_x.clone(),
            s.m_eta_x.clone(),
            s.wall_activity,
            Some(MomentMatch {
                k0: (&s.k0 - &m.k[0]).norm(),
                m0: s.m0.sub(&m.m[0]).frobenius_norm(),
            }),
        ),
        None => {
            warnings.push("simulation of the fitted model diverged".into());
            (DMatrix::zeros(n, n), Tensor::zeros(n, 3), f64::NAN, None)
        }
    };
    if wall_activity > 1e-3 {
        warnings.push(format!("wall active on {:.2}% of simulated steps", 100.0 * wall_activity));
    }
    Ok(FitReport {
        model,
        condition: fit.condition,
        least_squares: fit.least_squares,
        residuals: fit.residuals,
        moment_match,
        diagnostics: Some(ColoredDiagnostics {
            k_eta_x,
            m_eta_x,
            g: q0.g,
            h: q0.h,
            q0: q0.q0.into_matrix(),
            objective_q0,
            objective,
            wall_activity,
            objective_trace: trace,
            evaluations,
            converged,
            refined: refine.enabled,
        }),
        warnings,
    })
}
