//! Linear inverse models with white or colored noise.
//!
//! White noise: `A = K'(0) K(0)^{-1}` and `Q = -1/2 Sym(K'(0))`.
//!
//! Colored noise with correlation time `gamma`:
//! `A = [K''(0) + K'(0)/gamma] [K'(0) + K(0)/gamma]^{-1}`, and `Q` solves
//! `Bm Q + Q Bm^T = -Sym(A K(0))` with `Bm = (I - gamma A)^{-1}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::linalg::{condition_number, exp_integral, lyapunov_solve, matrix_exp, SpdMatrix, DEFAULT_EIGEN_TOL};
use crate::model::{NoiseSpec, QuadModel};
use crate::moments::{DerivativeSet, MomentSet};
use crate::tensor::sym;

const K0_CONDITION_LIMIT: f64 = 1e10;

#[derive(Clone, Debug, PartialEq)]
pub struct LinModel {
    pub a: DMatrix<f64>,
    pub q: SpdMatrix,
    pub noise: NoiseSpec,
}

impl LinModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// All eigenvalues of `A` in the open left half-plane.
    pub fn is_dissipative(&self) -> bool {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .all(|c| c.re < 0.0)
    }

    /// `(I - gamma A)^{-1}`; the identity for white noise.
    pub fn noise_propagator(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        match self.noise {
            NoiseSpec::White => Ok(DMatrix::identity(n, n)),
            NoiseSpec::Colored { gamma } => (DMatrix::identity(n, n) - &self.a * gamma)
                .try_inverse()
                .ok_or_else(|| Error::Singular("I - gamma A is singular".into())),
        }
    }

    pub fn to_quad(&self) -> QuadModel {
        QuadModel::linear(self.a.clone(), self.q.clone(), self.noise).expect("consistent linear model")
    }
}

#[derive(Clone, Debug)]
pub struct LimFit {
    pub model: LinModel,
    /// Condition number of the matrix inverted to obtain `A`.
    pub condition: f64,
    /// `||Sym(A K(0) + Q Bm^T)||_F` before SPD repair.
    pub fdr_residual: f64,
    pub warnings: Vec<String>,
}

fn mean_warning(m: &MomentSet, warnings: &mut Vec<String>) {
    let scale = m.k[0].trace().max(0.0).sqrt();
    let e = m.mean.norm();
    if e > 0.01 * scale {
        warnings.push(format!(
            "data mean norm {e:.3e} exceeds 1% of sqrt(tr K(0)) = {scale:.3e}; linear models assume zero mean"
        ));
    }
}

fn dissipative_warning(model: &LinModel, warnings: &mut Vec<String>) {
    if !model.is_dissipative() {
        warnings.push("fitted A has eigenvalues with non-negative real part".into());
    }
}

pub fn white_lim_fit(m: &MomentSet, d: &DerivativeSet) -> Result<LimFit> {
    let k0 = &m.k[0];
    let condition = condition_number(k0);
    if !(condition <= K0_CONDITION_LIMIT) {
        return Err(Error::Singular(format!("K(0) condition number {condition:.3e}")));
    }
    let k0_inv = k0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("K(0) is not invertible".into()))?;
    let a = &d.k1 * k0_inv;
    let q_raw = sym(&d.k1) * -0.5;
    let fdr_residual = sym(&(&a * k0 + &q_raw)).norm();
    let q = SpdMatrix::with_tolerance(q_raw, DEFAULT_EIGEN_TOL)?;
    let mut warnings = Vec::new();
    mean_warning(m, &mut warnings);
    if q.was_clipped() {
        warnings.push(format!("Q eigenvalue {:.3e} clipped to zero", q.min_eigenvalue()));
    }
    let model = LinModel {
        a,
        q,
        noise: NoiseSpec::White,
    };
    dissipative_warning(&model, &mut warnings);
    Ok(LimFit {
        model,
        condition,
        fdr_residual,
        warnings,
    })
}

pub fn colored_lim_fit(m: &MomentSet, d: &DerivativeSet, gamma: f64) -> Result<LimFit> {
    let noise = NoiseSpec::colored(gamma)?;
    let n = m.n;
    let k0 = &m.k[0];
    let regressor = &d.k1 + k0 / gamma;
    let condition = condition_number(&regressor);
    if !(condition <= K0_CONDITION_LIMIT) {
        return Err(Error::Singular(format!(
            "K'(0) + K(0)/gamma condition number {condition:.3e}"
        )));
    }
    let reg_inv = regressor
        .try_inverse()
        .ok_or_else(|| Error::Singular("K'(0) + K(0)/gamma is not invertible".into()))?;
    let a = (&d.k2 + &d.k1 / gamma) * reg_inv;
    let bm = (DMatrix::identity(n, n) - &a * gamma)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - gamma A is singular".into()))?;
    let rhs = -sym(&(&a * k0));
    let q_raw = lyapunov_solve(&bm, &rhs)?;
    let fdr_residual = sym(&(&a * k0 + &q_raw * bm.transpose())).norm();
    let q = SpdMatrix::with_tolerance(q_raw, DEFAULT_EIGEN_TOL)?;
    let mut warnings = Vec::new();
    mean_warning(m, &mut warnings);
    if q.was_clipped() {
        warnings.push(format!("Q eigenvalue {:.3e} clipped to zero", q.min_eigenvalue()));
    }
    let model = LinModel { a, q, noise };
    dissipative_warning(&model, &mut warnings);
    Ok(LimFit {
        model,
        condition,
        fdr_residual,
        warnings,
    })
}

/// Analytic lagged correlation of a fitted linear model.
///
/// White: `K(tau) = exp(tau A) K(0)`. Colored:
/// `K(tau) = exp(tau A) K(0) + exp(tau A) int_0^tau exp(-s (A + I/gamma)) ds Q Bm^T`.
pub fn reconstruct_k(model: &LinModel, k0: &DMatrix<f64>, taus: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if taus.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("lags must be non-negative".into()));
    }
    let n = model.n();
    match model.noise {
        NoiseSpec::White => taus
            .iter()
            .map(|&t| Ok(matrix_exp(&model.a, t)? * k0))
            .collect(),
        NoiseSpec::Colored { gamma } => {
            let bm = model.noise_propagator()?;
            let qb = model.q.matrix() * bm.transpose();
            let z = &model.a + DMatrix::<f64>::identity(n, n) / gamma;
            taus.iter()
                .map(|&t| {
                    let e = matrix_exp(&model.a, t)?;
                    Ok(&e * k0 + &e * exp_integral(&z, t)? * &qb)
                })
                .collect()
        }
    }
}

/// Discretized L2-in-lag misfit `sqrt(sum_{k dt <= l} ||K_fit - K_obs||_F^2 dt)`.
pub fn gamma_objective(model: &LinModel, m: &MomentSet, window: f64) -> Result<f64> {
    let last = window_lags(m, window)?;
    let taus: Vec<f64> = (0..=last).map(|k| k as f64 * m.dt).collect();
    let fitted = reconstruct_k(model, &m.k[0], &taus)?;
    let sum: f64 = fitted
        .iter()
        .zip(&m.k)
        .map(|(f, o)| (f - o).norm_squared() * m.dt)
        .sum();
    Ok(sum.sqrt())
}

fn window_lags(m: &MomentSet, window: f64) -> Result<usize> {
    if !(window >= 0.0) {
        return Err(Error::InvalidParameter(format!("window must be non-negative, got {window}")));
    }
    let last = (window / m.dt + 1e-9).floor() as usize;
    if last > m.max_lag() {
        return Err(Error::InsufficientLags {
            needed: last,
            have: m.max_lag(),
        });
    }
    Ok(last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    /// Grid points that produced a fit.
    pub grid: Vec<f64>,
    pub objective: Vec<f64>,
    pub best: f64,
    /// Grid points whose fit failed.
    pub failed: Vec<f64>,
}

/// `k` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < lo <= hi and k >= 1 (lo = {lo}, hi = {hi}, k = {k})"
        )));
    }
    if k == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect())
}

/// Default grid: 40 log-spaced points in `[0.01, 2]`.
pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(0.01, 2.0, 40).unwrap()
}

pub fn gamma_select(
    m: &MomentSet,
    d: &DerivativeSet,
    grid: &[f64],
    window: f64,
    exec: Execution,
) -> Result<GammaScan> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty gamma grid".into()));
    }
    if grid.iter().any(|g| !(*g > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("gamma grid must be positive and strictly increasing".into()));
    }
    window_lags(m, window)?;
    let evals = map_slice(grid, exec, |&g| {
        colored_lim_fit(m, d, g).and_then(|fit| gamma_objective(&fit.model, m, window))
    });
    let mut scan = GammaScan {
        grid: Vec::new(),
        objective: Vec::new(),
        best: f64::NAN,
        failed: Vec::new(),
    };
    let mut best_val = f64::INFINITY;
    for (&g, r) in grid.iter().zip(evals) {
        match r {
            Ok(v) if v.is_finite() => {
                if v < best_val {
                    best_val = v;
                    scan.best = g;
                }
                scan.grid.push(g);
                scan.objective.push(v);
            }
            _ => scan.failed.push(g),
        }
    }
    if scan.grid.is_empty() {
        return Err(Error::AllFitsFailed);
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{colored_moment_oracle, forward_derivatives, gaussian_moment_oracle, DiffScheme};
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn scalar_set(k0: f64, k1: f64) -> (MomentSet, DerivativeSet) {
        let m = MomentSet {
            n: 1,
            dt: 0.01,
            mean: DVector::zeros(1),
            k: vec![DMatrix::from_element(1, 1, k0); 3],
            m: vec![Tensor::zeros(1, 3); 3],
            s: vec![Tensor::zeros(1, 4); 2],
        };
        let d = DerivativeSet {
            k1: DMatrix::from_element(1, 1, k1),
            k2: DMatrix::zeros(1, 1),
            m1: Tensor::zeros(1, 3),
            m2: Tensor::zeros(1, 3),
            s1: Tensor::zeros(1, 4),
            scheme: DiffScheme::Forward,
        };
        (m, d)
    }

    #[test]
    fn scalar_white_fit() {
        let (m, d) = scalar_set(1.0, -1.0);
        let fit = white_lim_fit(&m, &d).unwrap();
        assert_relative_eq!(fit.model.a[(0, 0)], -1.0);
        assert_relative_eq!(fit.model.q.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn symmetric_k1_gives_q_exactly() {
        let mut m = gaussian_moment_oracle(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])),
            &SpdMatrix::new(DMatrix::identity(2, 2)).unwrap(),
            0.01,
            2,
            1,
        )
        .unwrap();
        m.k[0] = DMatrix::identity(2, 2);
        let k1 = DMatrix::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        let d = DerivativeSet {
            k1: k1.clone(),
            k2: DMatrix::zeros(2, 2),
            m1: Tensor::zeros(2, 3),
            m2: Tensor::zeros(2, 3),
            s1: Tensor::zeros(2, 4),
            scheme: DiffScheme::Forward,
        };
        let fit = white_lim_fit(&m, &d).unwrap();
        assert_eq!(fit.model.q.matrix(), &(-k1));
    }

    #[test]
    fn white_fit_on_oracle_moments() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let q = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let m = gaussian_moment_oracle(&a, &q, 0.01, 2, 1).unwrap();
        let d = forward_derivatives(&m, DiffScheme::Forward).unwrap();
        let fit = white_lim_fit(&m, &d).unwrap();
        assert!((&fit.model.a - &a).norm() / a.norm() < 0.01);
        assert!(fit.fdr_residual < 1e-10);
    }

    #[test]
    fn singular_k0() {
        let (m, d) = scalar_set(0.0, -1.0);
        assert!(matches!(white_lim_fit(&m, &d), Err(Error::Singular(_))));
    }

    #[test]
    fn colored_tiny_gamma_matches_white() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7])).unwrap();
        let m = gaussian_moment_oracle(&a, &q, 0.01, 3, 1).unwrap();
        let d = forward_derivatives(&m, DiffScheme::Forward).unwrap();
        let white = white_lim_fit(&m, &d).unwrap();
        let colored = colored_lim_fit(&m, &d, 1e-9).unwrap();
        assert!((&colored.model.a - &white.model.a).norm() <= 1e-6 * white.model.a.norm());
        assert!(colored.model.noise_propagator().unwrap().relative_eq(
            &DMatrix::identity(2, 2),
            1e-7,
            1e-7
        ));
    }

    #[test]
    fn colored_fit_exact_on_exact_derivatives() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7])).unwrap();
        let o = colored_moment_oracle(&a, &q, 0.5, 0.01, 2, 1).unwrap();
        let fit = colored_lim_fit(&o.moments, &o.exact, 0.5).unwrap();
        assert!((&fit.model.a - &a).abs().max() < 1e-10);
        assert!((fit.model.q.matrix() - q.matrix()).abs().max() < 1e-10);
        assert!(fit.fdr_residual < 1e-9);
    }

    #[test]
    fn colored_scalar_from_analytic_k() {
        // Scalar colored OU: evaluate the closed-form K on the lag grid and
        // difference it.
        let (a, q, gamma, dt) = (-1.0, 1.0, 0.5, 0.001);
        let model = LinModel {
            a: DMatrix::from_element(1, 1, a),
            q: SpdMatrix::new(DMatrix::from_element(1, 1, q)).unwrap(),
            noise: NoiseSpec::Colored { gamma },
        };
        let o = colored_moment_oracle(&model.a, &model.q, gamma, dt, 2, 1).unwrap();
        let taus: Vec<f64> = (0..=2).map(|k| k as f64 * dt).collect();
        let mut m = o.moments.clone();
        m.k = reconstruct_k(&model, &o.moments.k[0], &taus).unwrap();
        let d = forward_derivatives(&m, DiffScheme::Forward).unwrap();
        let fit = colored_lim_fit(&m, &d, gamma).unwrap();
        assert!((fit.model.a[(0, 0)] - a).abs() / a.abs() < 0.01);
    }

    #[test]
    fn reconstruct_at_zero_and_semigroup() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let k0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.6]);
        for noise in [NoiseSpec::White, NoiseSpec::Colored { gamma: 0.3 }] {
            let model = LinModel {
                a: a.clone(),
                q: q.clone(),
                noise,
            };
            let k = reconstruct_k(&model, &k0, &[0.0]).unwrap();
            assert_relative_eq!(k[0], k0, epsilon = 1e-14);
        }
        let white = LinModel {
            a: a.clone(),
            q,
            noise: NoiseSpec::White,
        };
        let k = reconstruct_k(&white, &k0, &[0.4, 1.1]).unwrap();
        let shifted = matrix_exp(&a, 0.7).unwrap() * &k[0];
        assert!((shifted - &k[1]).norm() < 1e-12);
    }

    #[test]
    fn colored_reconstruction_matches_augmented_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7])).unwrap();
        let gamma = 0.5;
        let o = colored_moment_oracle(&a, &q, gamma, 0.1, 20, 0).unwrap();
        let model = LinModel {
            a,
            q,
            noise: NoiseSpec::Colored { gamma },
        };
        let taus: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let k = reconstruct_k(&model, &o.moments.k[0], &taus).unwrap();
        for (got, want) in k.iter().zip(&o.moments.k) {
            assert!((got - want).abs().max() < 1e-11);
        }
    }

    #[test]
    fn gamma_objective_prefers_true_q() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7])).unwrap();
        let gamma = 0.5;
        let o = colored_moment_oracle(&a, &q, gamma, 0.05, 40, 0).unwrap();
        let truth = LinModel {
            a: a.clone(),
            q: q.clone(),
            noise: NoiseSpec::Colored { gamma },
        };
        let doubled = LinModel {
            q: SpdMatrix::new(q.matrix() * 2.0).unwrap(),
            ..truth.clone()
        };
        let at_truth = gamma_objective(&truth, &o.moments, 2.0).unwrap();
        let at_double = gamma_objective(&doubled, &o.moments, 2.0).unwrap();
        assert!(at_truth <= at_double);
        assert!(at_truth < 1e-10);
    }

    #[test]
    fn single_point_grid() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = SpdMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let o = colored_moment_oracle(&a, &q, 0.5, 0.01, 50, 1).unwrap();
        let scan = gamma_select(&o.moments, &o.exact, &[0.3], 0.5, Execution::Sequential).unwrap();
        assert_eq!(scan.best, 0.3);
        assert_eq!(scan.grid, vec![0.3]);
    }

    #[test]
    fn gamma_select_on_exact_moments() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.6, -1.5]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7])).unwrap();
        let o = colored_moment_oracle(&a, &q, 0.5, 0.01, 200, 1).unwrap();
        let grid = default_gamma_grid();
        let scan = gamma_select(&o.moments, &o.exact, &grid, 2.0, Execution::default()).unwrap();
        let idx = grid.iter().position(|g| *g == scan.best).unwrap();
        let true_idx = grid
            .iter()
            .enumerate()
            .min_by(|x, y| (x.1.ln() - 0.5f64.ln()).abs().total_cmp(&(y.1.ln() - 0.5f64.ln()).abs()))
            .unwrap()
            .0;
        assert!(idx.abs_diff(true_idx) <= 1);
    }

    #[test]
    fn grid_validation() {
        let (m, d) = scalar_set(1.0, -1.0);
        assert!(gamma_select(&m, &d, &[], 0.01, Execution::Sequential).is_err());
        assert!(gamma_select(&m, &d, &[0.2, 0.1], 0.01, Execution::Sequential).is_err());
        assert!(gamma_select(&m, &d, &[0.1], 10.0, Execution::Sequential).is_err());
        assert_eq!(log_grid(0.01, 2.0, 40).unwrap().len(), 40);
    }
}
