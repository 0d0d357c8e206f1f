//! Lagged moment tensors and their finite-difference derivatives.
//!
//! For a series `x(0), .., x(N)` and lag `tau = k dt`,
//!
//! ```text
//! K_ij(tau)   = sum_t x_i(t + tau) x_j(t)             / (N - k + 1)
//! M_ijk(tau)  = sum_t x_i(t + tau) x_j(t) x_k(t)      / (N - k + 1)
//! S_ijkw(tau) = sum_t x_i(t + tau) x_j(t) x_k(t) x_w(t) / (N - k + 1)
//! ```
//!
//! All moments are non-central. Trailing (same-time) indices are symmetric
//! by construction and lag-zero tensors are fully symmetric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::{lyapunov_solve, matrix_exp, SpdMatrix};
use crate::sim::Trajectory;
use crate::tensor::{pair_count, pairs, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    pub n: usize,
    pub dt: f64,
    pub mean: DVector<f64>,
    /// `K(k dt)` for `k = 0..=L`.
    pub k: Vec<DMatrix<f64>>,
    /// `M(k dt)` for `k = 0..=L`.
    pub m: Vec<Tensor>,
    /// `S(k dt)` for `k = 0..=L_S`.
    pub s: Vec<Tensor>,
}

impl MomentSet {
    pub fn max_lag(&self) -> usize {
        self.k.len().saturating_sub(1)
    }

    pub fn max_lag_s(&self) -> usize {
        self.s.len().saturating_sub(1)
    }

    /// Largest violation of the trailing-index and lag-zero symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (lag, m) in self.m.iter().enumerate() {
            worst = worst.max(m.asymmetry_from(if lag == 0 { 0 } else { 1 }));
        }
        for (lag, s) in self.s.iter().enumerate() {
            worst = worst.max(s.asymmetry_from(if lag == 0 { 0 } else { 1 }));
        }
        if let Some(k0) = self.k.first() {
            worst = worst.max((k0 - k0.transpose()).abs().max());
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffScheme {
    /// `(X1 - X0)/dt` and `(X2 - 2 X1 + X0)/dt^2`.
    #[default]
    Forward,
    /// `(-3 X0 + 4 X1 - X2)/(2 dt)` and `(2 X0 - 5 X1 + 4 X2 - X3)/dt^2`.
    ForwardSecondOrder,
}

impl DiffScheme {
    fn first_weights(self) -> &'static [f64] {
        match self {
            DiffScheme::Forward => &[-1.0, 1.0],
            DiffScheme::ForwardSecondOrder => &[-1.5, 2.0, -0.5],
        }
    }

    fn second_weights(self) -> &'static [f64] {
        match self {
            DiffScheme::Forward => &[1.0, -2.0, 1.0],
            DiffScheme::ForwardSecondOrder => &[2.0, -5.0, 4.0, -1.0],
        }
    }

    /// Lags needed for (first, second) derivatives.
    pub fn required_lags(self) -> (usize, usize) {
        (self.first_weights().len() - 1, self.second_weights().len() - 1)
    }
}

/// Derivatives of the lagged moments at lag zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeSet {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub m1: Tensor,
    pub m2: Tensor,
    pub s1: Tensor,
    pub scheme: DiffScheme,
}

fn check_len(data: &Trajectory, lag: usize) -> Result<()> {
    if data.len() <= lag + 1 {
        return Err(Error::TooShort(format!(
            "{} samples cannot support lag {}",
            data.len(),
            lag
        )));
    }
    Ok(())
}

/// Per-sample same-time products: pairs `x_j x_k` (j <= k) and triples
/// `x_j x_k x_w` (j <= k <= w).
struct Products {
    pairs: Vec<f64>,
    triples: Vec<f64>,
    n_pairs: usize,
    n_triples: usize,
    triple_index: Vec<(usize, usize, usize)>,
}

impl Products {
    fn new(data: &Trajectory, with_triples: bool) -> Self {
        let n = data.n;
        let len = data.len();
        let n_pairs = pair_count(n);
        let triple_index: Vec<(usize, usize, usize)> = if with_triples {
            (0..n)
                .flat_map(|j| (j..n).flat_map(move |k| (k..n).map(move |w| (j, k, w))))
                .collect()
        } else {
            Vec::new()
        };
        let n_triples = triple_index.len();
        let mut pair_buf = Vec::with_capacity(len * n_pairs);
        let mut triple_buf = Vec::with_capacity(len * n_triples);
        for t in 0..len {
            let x = data.row(t);
            for (j, k) in pairs(n) {
                pair_buf.push(x[j] * x[k]);
            }
            for &(j, k, w) in &triple_index {
                triple_buf.push(x[j] * x[k] * x[w]);
            }
        }
        Self {
            pairs: pair_buf,
            triples: triple_buf,
            n_pairs,
            n_triples,
            triple_index,
        }
    }
}

struct LagMoments {
    k: DMatrix<f64>,
    m: Tensor,
    s: Option<Tensor>,
}

fn lag_moments(data: &Trajectory, prod: &Products, lag: usize, with_s: bool) -> LagMoments {
    let n = data.n;
    let count = data.len() - lag;
    let mut k_acc = vec![0.0; n * n];
    let mut m_acc = vec![0.0; n * prod.n_pairs];
    let mut s_acc = vec![0.0; if with_s { n * prod.n_triples } else { 0 }];
    for t in 0..count {
        let lead = data.row(t + lag);
        let now = data.row(t);
        let pp = &prod.pairs[t * prod.n_pairs..(t + 1) * prod.n_pairs];
        for i in 0..n {
            let xi = lead[i];
            let kr = &mut k_acc[i * n..(i + 1) * n];
            for (acc, xj) in kr.iter_mut().zip(now) {
                *acc += xi * xj;
            }
            let mr = &mut m_acc[i * prod.n_pairs..(i + 1) * prod.n_pairs];
            for (acc, p) in mr.iter_mut().zip(pp) {
                *acc += xi * p;
            }
        }
        if with_s {
            let tt = &prod.triples[t * prod.n_triples..(t + 1) * prod.n_triples];
            for i in 0..n {
                let xi = lead[i];
                let sr = &mut s_acc[i * prod.n_triples..(i + 1) * prod.n_triples];
                for (acc, p) in sr.iter_mut().zip(tt) {
                    *acc += xi * p;
                }
            }
        }
    }
    let div = count as f64;
    let k = DMatrix::from_fn(n, n, |i, j| k_acc[i * n + j] / div);
    let mut m = Tensor::zeros(n, 3);
    for i in 0..n {
        for (p, (j, kk)) in pairs(n).enumerate() {
            let v = m_acc[i * prod.n_pairs + p] / div;
            m.set(&[i, j, kk], v);
            m.set(&[i, kk, j], v);
        }
    }
    let s = with_s.then(|| {
        let mut s = Tensor::zeros(n, 4);
        for i in 0..n {
            for (p, &(j, kk, w)) in prod.triple_index.iter().enumerate() {
                let v = s_acc[i * prod.n_triples + p] / div;
                for (a, b, c) in [
                    (j, kk, w),
                    (j, w, kk),
                    (kk, j, w),
                    (kk, w, j),
                    (w, j, kk),
                    (w, kk, j),
                ] {
                    s.set(&[i, a, b, c], v);
                }
            }
        }
        s
    });
    LagMoments { k, m, s }
}

fn sorted<const R: usize>(mut idx: [usize; R]) -> [usize; R] {
    idx.sort_unstable();
    idx
}

/// Make a lag-zero tensor exactly symmetric by reading every entry from its
/// sorted index.
fn symmetrize_full(t: &Tensor) -> Tensor {
    let n = t.n();
    let mut out = t.clone();
    match t.order() {
        3 => {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out.set(&[i, j, k], t.get(&sorted([i, j, k])));
                    }
                }
            }
        }
        4 => {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for w in 0..n {
                            out.set(&[i, j, k, w], t.get(&sorted([i, j, k, w])));
                        }
                    }
                }
            }
        }
        _ => {}
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct MomentOptions {
    pub max_lag: usize,
    pub max_lag_s: usize,
    pub exec: Execution,
}

impl MomentOptions {
    pub fn new(max_lag: usize, max_lag_s: usize) -> Self {
        Self {
            max_lag,
            max_lag_s,
            exec: Execution::default(),
        }
    }
}

/// Estimate `E`, `K`, `M` (lags `0..=max_lag`) and `S` (lags `0..=max_lag_s`).
pub fn estimate_moments(data: &Trajectory, opts: MomentOptions) -> Result<MomentSet> {
    check_len(data, opts.max_lag.max(opts.max_lag_s))?;
    let n = data.n;
    let prod = Products::new(data, true);
    let lags = opts.max_lag.max(opts.max_lag_s) + 1;
    let per_lag = map_indexed(lags, opts.exec, |lag| {
        lag_moments(data, &prod, lag, lag <= opts.max_lag_s)
    });

    let mut k = Vec::with_capacity(opts.max_lag + 1);
    let mut m = Vec::with_capacity(opts.max_lag + 1);
    let mut s = Vec::with_capacity(opts.max_lag_s + 1);
    for (lag, lm) in per_lag.into_iter().enumerate() {
        let (kk, mm, ss) = if lag == 0 {
            let k0 = (&lm.k + lm.k.transpose()) * 0.5;
            (k0, symmetrize_full(&lm.m), lm.s.map(|s| symmetrize_full(&s)))
        } else {
            (lm.k, lm.m, lm.s)
        };
        if lag <= opts.max_lag {
            k.push(kk);
            m.push(mm);
        }
        if let Some(ss) = ss {
            s.push(ss);
        }
    }
    Ok(MomentSet {
        n,
        dt: data.dt,
        mean: data.mean(),
        k,
        m,
        s,
    })
}

/// Lag-zero `E`, `K(0)`, `M(0)` only (cheap path for simulation summaries).
pub fn lag_zero_moments(data: &Trajectory) -> Result<(DVector<f64>, DMatrix<f64>, Tensor)> {
    check_len(data, 0)?;
    let prod = Products::new(data, false);
    let lm = lag_moments(data, &prod, 0, false);
    let k0 = (&lm.k + lm.k.transpose()) * 0.5;
    Ok((data.mean(), k0, symmetrize_full(&lm.m)))
}

/// Sample `<eta_i x_j>` from a trajectory that recorded its noise path.
pub fn noise_state_covariance(data: &Trajectory) -> Result<DMatrix<f64>> {
    let n = data.n;
    if data.noise.is_none() {
        return Err(Error::InvalidParameter("trajectory carries no noise path".into()));
    }
    let mut acc = DMatrix::zeros(n, n);
    for t in 0..data.len() {
        let x = data.row(t);
        let eta = data.noise_row(t).unwrap();
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += eta[i] * x[j];
            }
        }
    }
    Ok(acc / data.len() as f64)
}

fn combine_matrices(xs: &[DMatrix<f64>], w: &[f64], scale: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(xs[0].nrows(), xs[0].ncols());
    for (x, wi) in xs.iter().zip(w) {
        out += x * *wi;
    }
    out * scale
}

fn combine_tensors(xs: &[Tensor], w: &[f64], scale: f64) -> Tensor {
    let mut out = Tensor::zeros(xs[0].n(), xs[0].order());
    for (x, wi) in xs.iter().zip(w) {
        out = out.add(&x.scale(*wi));
    }
    out.scale(scale)
}

/// Finite-difference derivatives at lag zero.
pub fn forward_derivatives(m: &MomentSet, scheme: DiffScheme) -> Result<DerivativeSet> {
    let (need1, need2) = scheme.required_lags();
    if m.max_lag() < need2 {
        return Err(Error::InsufficientLags {
            needed: need2,
            have: m.max_lag(),
        });
    }
    if m.max_lag_s() < need1 || m.s.is_empty() {
        return Err(Error::InsufficientLags {
            needed: need1,
            have: m.max_lag_s(),
        });
    }
    let w1 = scheme.first_weights();
    let w2 = scheme.second_weights();
    let h = m.dt;
    Ok(DerivativeSet {
        k1: combine_matrices(&m.k, w1, 1.0 / h),
        k2: combine_matrices(&m.k, w2, 1.0 / (h * h)),
        m1: combine_tensors(&m.m, w1, 1.0 / h),
        m2: combine_tensors(&m.m, w2, 1.0 / (h * h)),
        s1: combine_tensors(&m.s, w1, 1.0 / h),
        scheme,
    })
}

/// `S_ijkw(tau) = K_ij(tau) K_kw(0) + K_ik(tau) K_jw(0) + K_iw(tau) K_jk(0)`.
pub fn isserlis(k_tau: &DMatrix<f64>, k0: &DMatrix<f64>) -> Tensor {
    let n = k0.nrows();
    let mut s = Tensor::zeros(n, 4);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for w in 0..n {
                    let v = k_tau[(i, j)] * k0[(k, w)]
                        + k_tau[(i, k)] * k0[(j, w)]
                        + k_tau[(i, w)] * k0[(j, k)];
                    s.set(&[i, j, k, w], v);
                }
            }
        }
    }
    s
}

fn require_stable(a: &DMatrix<f64>) -> Result<()> {
    let eig = a.clone().complex_eigenvalues();
    if let Some(bad) = eig.iter().find(|c| c.re >= 0.0) {
        return Err(Error::UnstableA(format!("eigenvalue {bad} has non-negative real part")));
    }
    Ok(())
}

/// Exact moments of the zero-mean white-noise OU process
/// `dx = A x dt + sqrt(2Q) dW` on the lag grid `k dt`.
pub fn gaussian_moment_oracle(
    a: &DMatrix<f64>,
    q: &SpdMatrix,
    dt: f64,
    max_lag: usize,
    max_lag_s: usize,
) -> Result<MomentSet> {
    require_stable(a)?;
    let n = a.nrows();
    let k0 = lyapunov_solve(a, &(q.matrix() * -2.0))?;
    let k: Vec<DMatrix<f64>> = (0..=max_lag.max(max_lag_s))
        .map(|lag| matrix_exp(a, lag as f64 * dt).map(|e| e * &k0))
        .collect::<Result<_>>()?;
    let s = (0..=max_lag_s).map(|lag| isserlis(&k[lag], &k0)).collect();
    Ok(MomentSet {
        n,
        dt,
        mean: DVector::zeros(n),
        k: k[..=max_lag].to_vec(),
        m: vec![Tensor::zeros(n, 3); max_lag + 1],
        s,
    })
}

/// Exact moments of the colored-noise linear model, obtained from the
/// stationary covariance of the augmented state `(x, eta)`.
#[derive(Clone, Debug)]
pub struct ColoredOracle {
    pub moments: MomentSet,
    /// Exact one-sided derivatives at lag zero.
    pub exact: DerivativeSet,
    /// `<eta x^T>`.
    pub k_eta_x: DMatrix<f64>,
}

pub fn colored_moment_oracle(
    a: &DMatrix<f64>,
    q: &SpdMatrix,
    gamma: f64,
    dt: f64,
    max_lag: usize,
    max_lag_s: usize,
) -> Result<ColoredOracle> {
    require_stable(a)?;
    let n = a.nrows();
    let root = crate::linalg::spd_sqrt(&SpdMatrix::new(q.matrix() * 2.0)?);
    let mut f = DMatrix::zeros(2 * n, 2 * n);
    f.view_mut((0, 0), (n, n)).copy_from(a);
    f.view_mut((0, n), (n, n)).copy_from(&root);
    f.view_mut((n, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * (-1.0 / gamma)));
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    d.view_mut((n, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * (1.0 / (gamma * gamma))));
    let p = lyapunov_solve(&f, &(-d))?;
    let xx = |m: &DMatrix<f64>| m.view((0, 0), (n, n)).into_owned();
    let k0 = xx(&p);
    let k_eta_x = p.view((n, 0), (n, n)).into_owned();
    let lags = max_lag.max(max_lag_s).max(1);
    let k: Vec<DMatrix<f64>> = (0..=lags)
        .map(|lag| matrix_exp(&f, lag as f64 * dt).map(|e| xx(&(e * &p))))
        .collect::<Result<_>>()?;
    let k1 = xx(&(&f * &p));
    let k2 = xx(&(&f * &f * &p));
    let moments = MomentSet {
        n,
        dt,
        mean: DVector::zeros(n),
        k: k[..=max_lag].to_vec(),
        m: vec![Tensor::zeros(n, 3); max_lag + 1],
        s: (0..=max_lag_s).map(|lag| isserlis(&k[lag], &k0)).collect(),
    };
    let exact = DerivativeSet {
        s1: isserlis(&k1, &k0),
        k1,
        k2,
        m1: Tensor::zeros(n, 3),
        m2: Tensor::zeros(n, 3),
        scheme: DiffScheme::Forward,
    };
    Ok(ColoredOracle {
        moments,
        exact,
        k_eta_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_series() {
        let c = [2.0, -1.0];
        let vals: Vec<f64> = (0..10).flat_map(|_| c).collect();
        let tr = Trajectory::new(2, 0.1, vals).unwrap();
        let m = estimate_moments(&tr, MomentOptions::new(3, 1)).unwrap();
        assert_eq!(m.mean.as_slice(), &c);
        for lag in 0..=3 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(m.k[lag][(i, j)], c[i] * c[j], epsilon = 1e-14);
                    for k in 0..2 {
                        assert_relative_eq!(m.m[lag].get(&[i, j, k]), c[i] * c[j] * c[k], epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn alternating_series_lag_one() {
        let vals: Vec<f64> = (0..10).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let tr = Trajectory::new(1, 1.0, vals).unwrap();
        let m = estimate_moments(&tr, MomentOptions::new(2, 1)).unwrap();
        assert_eq!(m.k[0][(0, 0)], 1.0);
        assert_eq!(m.k[1][(0, 0)], -1.0);
        assert_eq!(m.k[2][(0, 0)], 1.0);
    }

    #[test]
    fn too_short() {
        let tr = Trajectory::new(1, 1.0, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            estimate_moments(&tr, MomentOptions::new(2, 1)),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn symmetry_of_estimates() {
        let vals: Vec<f64> = (0..300)
            .flat_map(|t| {
                let s = t as f64 * 0.37;
                [s.sin(), (1.3 * s).cos(), (0.7 * s).sin() * s.cos()]
            })
            .collect();
        let tr = Trajectory::new(3, 0.1, vals).unwrap();
        let m = estimate_moments(&tr, MomentOptions::new(3, 2)).unwrap();
        assert!(m.symmetry_defect() <= 1e-15);
    }

    fn affine_moments(n: usize, dt: f64, lags: usize) -> MomentSet {
        let eye = DMatrix::<f64>::identity(n, n);
        MomentSet {
            n,
            dt,
            mean: DVector::zeros(n),
            k: (0..=lags).map(|l| &eye * (1.0 + l as f64 * dt)).collect(),
            m: vec![Tensor::zeros(n, 3); lags + 1],
            s: vec![Tensor::zeros(n, 4); lags + 1],
        }
    }

    #[test]
    fn forward_differences_exact_on_affine() {
        let m = affine_moments(2, 0.1, 3);
        for scheme in [DiffScheme::Forward, DiffScheme::ForwardSecondOrder] {
            let d = forward_derivatives(&m, scheme).unwrap();
            assert_relative_eq!(d.k1, DMatrix::identity(2, 2), epsilon = 1e-12);
            assert!(d.k2.abs().max() < 1e-9);
        }
    }

    #[test]
    fn second_order_scheme_exact_on_quadratic() {
        let dt = 0.1;
        let mut m = affine_moments(1, dt, 3);
        for l in 0..=3 {
            let t = l as f64 * dt;
            m.k[l] = DMatrix::from_element(1, 1, 1.0 + 2.0 * t + 3.0 * t * t);
        }
        let d = forward_derivatives(&m, DiffScheme::ForwardSecondOrder).unwrap();
        assert_relative_eq!(d.k1[(0, 0)], 2.0, epsilon = 1e-10);
        assert_relative_eq!(d.k2[(0, 0)], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn forward_difference_bias_on_exponential() {
        let dt = 0.05;
        let mut m = affine_moments(1, dt, 2);
        for l in 0..=2 {
            m.k[l] = DMatrix::from_element(1, 1, (-(l as f64) * dt).exp());
        }
        let d = forward_derivatives(&m, DiffScheme::Forward).unwrap();
        assert_relative_eq!(d.k1[(0, 0)], ((-dt).exp() - 1.0) / dt, epsilon = 1e-14);
    }

    #[test]
    fn insufficient_lags() {
        let m = affine_moments(1, 0.1, 1);
        assert!(matches!(
            forward_derivatives(&m, DiffScheme::Forward),
            Err(Error::InsufficientLags { .. })
        ));
    }

    #[test]
    fn scalar_oracle() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = SpdMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let m = gaussian_moment_oracle(&a, &q, 0.1, 5, 1).unwrap();
        assert_relative_eq!(m.k[0][(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.k[3][(0, 0)], (-0.3f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(m.s[0].get(&[0, 0, 0, 0]), 3.0, epsilon = 1e-13);
        assert!(m.m.iter().all(|t| t.frobenius_norm() == 0.0));
    }

    #[test]
    fn diagonal_oracle_k0() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let q = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let m = gaussian_moment_oracle(&a, &q, 0.01, 2, 1).unwrap();
        assert_relative_eq!(
            m.k[0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
            epsilon = 1e-13
        );
    }

    #[test]
    fn oracle_rejects_unstable() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = SpdMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(
            gaussian_moment_oracle(&a, &q, 0.1, 2, 1),
            Err(Error::UnstableA(_))
        ));
    }

    #[test]
    fn colored_oracle_noise_covariance() {
        // <eta x^T> = sqrt(Q/2) (I - gamma A)^{-T}
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -2.0]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let gamma = 0.4;
        let o = colored_moment_oracle(&a, &q, gamma, 0.01, 2, 1).unwrap();
        let bm = (DMatrix::<f64>::identity(2, 2) - &a * gamma).try_inverse().unwrap();
        let half = crate::linalg::spd_sqrt(&SpdMatrix::new(q.matrix() * 0.5).unwrap());
        assert!((&o.k_eta_x - half * bm.transpose()).abs().max() < 1e-12);
        // differentiable process: K'(0) is antisymmetric
        assert!((&o.exact.k1 + o.exact.k1.transpose()).abs().max() < 1e-12);
    }
}
