//! Dense linear-algebra kernels: SPD repair and square root, matrix
//! exponential and its integral, Lyapunov solves and (constrained) least
//! squares. State dimensions are small (n <= ~10), so everything is dense.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition numbers above this are flagged on every fitter solve.
pub const CONDITION_WARN: f64 = 1e8;

/// Default relative eigenvalue tolerance for the SPD repair policy.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive semidefinite matrix that passed the repair policy:
/// eigenvalues in `[-tol, 0)` are clipped to zero, anything below `-tol`
/// is rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    data: DMatrix<f64>,
    eigen_floor: f64,
    clipped: bool,
    min_eigenvalue: f64,
}

impl SpdMatrix {
    /// Validate with the default relative tolerance.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(data, DEFAULT_EIGEN_TOL)
    }

    /// `rel_tol` is relative to the largest absolute eigenvalue.
    pub fn with_tolerance(data: DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch("SPD matrix must be square".into()));
        }
        let norm = data.norm();
        let asym = (&data - data.transpose()).norm();
        if norm > 0.0 && asym > SYMMETRY_TOL * norm {
            return Err(Error::NotSymmetric(asym / norm));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite SPD candidate".into()));
        }
        let sym = (&data + data.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = rel_tol * scale;
        let min_eigenvalue = eig.eigenvalues.min();
        if min_eigenvalue < -tol {
            return Err(Error::IndefiniteBeyondTolerance {
                min_eigenvalue,
                tolerance: tol,
                eigenvalues: eig.eigenvalues.iter().copied().collect(),
            });
        }
        let clipped = min_eigenvalue < 0.0;
        let data = if clipped {
            log::warn!("clipping eigenvalue {min_eigenvalue:.3e} of SPD candidate to zero");
            let vals = eig.eigenvalues.map(|v| v.max(0.0));
            let m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            (&m + m.transpose()) * 0.5
        } else {
            sym
        };
        Ok(Self {
            data,
            eigen_floor: tol,
            clipped,
            min_eigenvalue,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// Whether negative eigenvalues were clipped during repair.
    pub fn was_clipped(&self) -> bool {
        self.clipped
    }

    /// Smallest eigenvalue before clipping.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }
}

/// Nearest positive semidefinite matrix in the Frobenius norm: negative
/// eigenvalues of the symmetric part are set to `floor`.
pub fn nearest_psd(m: &DMatrix<f64>, floor: f64) -> Result<SpdMatrix> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor.max(0.0)));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    SpdMatrix::new((&r + r.transpose()) * 0.5)
}

/// Symmetric PSD square root.
pub fn spd_sqrt(q: &SpdMatrix) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(q.matrix().clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}

/// `exp(t A)` by scaling and squaring with a Padé approximant.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("matrix exponential of non-square matrix".into()));
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix exponential input".into()));
    }
    let scaled = a * t;
    let out = scaled.exp();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::ExpOverflow(scaled.norm()));
    }
    Ok(out)
}

/// `int_0^t exp(-s Z) ds`, read off the upper-right block of
/// `exp(t [[-Z, I], [0, 0]])`; valid for singular `Z`.
pub fn exp_integral(z: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    if !z.is_square() {
        return Err(Error::DimensionMismatch("exp_integral of non-square matrix".into()));
    }
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-z));
    block
        .view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let e = matrix_exp(&block, t)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// 2-norm condition number from the singular values (`inf` when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `F X + X F^T = S` by Kronecker vectorization.
pub fn lyapunov_solve(f: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if !f.is_square() || s.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Lyapunov operands must be n x n".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(f) + f.kronecker(&eye);
    let cond = condition_number(&op);
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::SingularSylvester(format!(
            "operator condition number {cond:.3e}; eigenvalues of F pair to zero"
        )));
    }
    let rhs = DVector::from_column_slice(s.as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSylvester("LU factorization failed".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Solve a square system for several right-hand sides with one round of
/// iterative refinement. Returns the solution and the condition number.
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch("square solve shape mismatch".into()));
    }
    let cond = condition_number(a);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("LU failed (condition {cond:.3e})")))?;
    let resid = b - a * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    Ok((x, cond))
}

/// Affine map from a reduced parameter vector to the stacked full vector:
/// `full = map * reduced + offset`. The full vector stacks the per-column
/// unknowns of a multi right-hand-side problem: entry `r * d + c` is row `c`
/// of right-hand side `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMap {
    pub map: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ParameterMap {
    pub fn identity(full_dim: usize) -> Self {
        Self {
            map: DMatrix::identity(full_dim, full_dim),
            offset: DVector::zeros(full_dim),
        }
    }

    pub fn full_dim(&self) -> usize {
        self.map.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.map.ncols()
    }

    pub fn expand(&self, reduced: &DVector<f64>) -> DVector<f64> {
        &self.map * reduced + &self.offset
    }
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub reduced: DVector<f64>,
    /// `d x n_rhs` solution, one column per right-hand side.
    pub full: DMatrix<f64>,
    pub condition: f64,
    pub rank_deficient: bool,
    pub residual_norm: f64,
}

/// `min || design * Theta - targets ||_F` over `Theta = unstack(map(theta_red))`.
///
/// Solved through an SVD of the column-equilibrated reduced design; the
/// minimum-norm solution is returned when the design is rank deficient.
pub fn constrained_least_squares(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    map: &ParameterMap,
) -> Result<LsSolution> {
    let (m, d) = design.shape();
    let n_rhs = targets.ncols();
    if targets.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "design has {m} rows, targets have {}",
            targets.nrows()
        )));
    }
    if map.full_dim() != d * n_rhs || map.offset.len() != d * n_rhs {
        return Err(Error::DimensionMismatch(format!(
            "parameter map has full dimension {}, expected {}",
            map.full_dim(),
            d * n_rhs
        )));
    }
    let red = map.reduced_dim();
    if red == 0 {
        return Err(Error::EmptyFreeSet);
    }

    // Stacked design (I ⊗ design) applied to the map.
    let mut a = DMatrix::zeros(m * n_rhs, red);
    let mut b = DVector::zeros(m * n_rhs);
    for r in 0..n_rhs {
        let block = map.map.rows(r * d, d);
        let off = map.offset.rows(r * d, d);
        a.view_mut((r * m, 0), (m, red)).copy_from(&(design * block));
        let t = targets.column(r) - design * off;
        b.rows_mut(r * m, m).copy_from(&t);
    }
    let condition = condition_number(&a);

    let scales: Vec<f64> = (0..red)
        .map(|c| {
            let s = a.column(c).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (c, s) in scales.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * (m * n_rhs).max(red) as f64 * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let rank_deficient = rank < red || m * n_rhs < red;
    let y = svd
        .solve(&b, eps)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let reduced = DVector::from_iterator(red, y.iter().zip(&scales).map(|(v, s)| v / s));
    let residual_norm = (&a * &reduced - &b).norm();
    if rank_deficient {
        log::warn!("least-squares design is rank deficient ({rank} < {red}); minimum-norm solution returned");
    }
    let full_vec = map.expand(&reduced);
    let full = DMatrix::from_column_slice(d, n_rhs, full_vec.as_slice());
    Ok(LsSolution {
        reduced,
        full,
        condition,
        rank_deficient,
        residual_norm,
    })
}
