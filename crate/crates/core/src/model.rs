//! Model types shared by the simulator and the fitters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::tensor::{quad_features, QuadTensor};

/// Stochastic forcing: Gaussian white noise, or Ornstein-Uhlenbeck colored
/// noise with correlation time `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    White,
    Colored { gamma: f64 },
}

impl NoiseSpec {
    pub fn colored(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise correlation time must be positive, got {gamma}"
            )));
        }
        Ok(NoiseSpec::Colored { gamma })
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            NoiseSpec::White => None,
            NoiseSpec::Colored { gamma } => Some(*gamma),
        }
    }
}

/// `dx/dt = B x2 (x x^T) + A x + C + sqrt(2Q) noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadModel {
    pub b: QuadTensor,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q: SpdMatrix,
    pub noise: NoiseSpec,
}

impl QuadModel {
    pub fn new(
        b: QuadTensor,
        a: DMatrix<f64>,
        c: DVector<f64>,
        q: SpdMatrix,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.n() != n || c.len() != n || q.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "model blocks disagree: B n={}, A {}x{}, C {}, Q {}",
                b.n(),
                a.nrows(),
                a.ncols(),
                c.len(),
                q.n()
            )));
        }
        if let NoiseSpec::Colored { gamma } = noise {
            NoiseSpec::colored(gamma)?;
        }
        Ok(Self { b, a, c, q, noise })
    }

    /// Linear model (B = 0, C = 0).
    pub fn linear(a: DMatrix<f64>, q: SpdMatrix, noise: NoiseSpec) -> Result<Self> {
        let n = a.nrows();
        Self::new(QuadTensor::zeros(n), a, DVector::zeros(n), q, noise)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `B quad(x) + A x + C`.
    pub fn full_drift(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        self.drift_into(x, out.as_mut_slice());
        out
    }

    pub(crate) fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        let b = self.b.as_matrix();
        for i in 0..n {
            let mut acc = self.c[i];
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            let mut p = 0;
            for j in 0..n {
                for k in j..n {
                    acc += b[(i, p)] * x[j] * x[k];
                    p += 1;
                }
            }
            out[i] = acc;
        }
    }

    pub fn quad_part(&self, x: &[f64]) -> DVector<f64> {
        self.b.as_matrix() * quad_features(x)
    }

    /// Two-dimensional quadratic benchmark system with an energy-conserving
    /// nonlinearity.
    pub fn two_dimensional_benchmark(noise: NoiseSpec) -> Self {
        let b = QuadTensor::from_rows(&[vec![0.0, -1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -1.0, -2.0]);
        let c = DVector::from_vec(vec![0.5, 0.0]);
        let q = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        Self::new(b, a, c, q, noise).unwrap()
    }

    /// Stochastic Lorenz 63 system with `Q = I`.
    pub fn lorenz63(sigma: f64, rho: f64, beta: f64, noise: NoiseSpec) -> Self {
        let mut b = QuadTensor::zeros(3);
        b.set(1, 0, 2, -1.0);
        b.set(2, 0, 1, 1.0);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[-sigma, sigma, 0.0, rho, -1.0, 0.0, 0.0, 0.0, -beta],
        );
        let q = SpdMatrix::new(DMatrix::identity(3, 3)).unwrap();
        Self::new(b, a, DVector::zeros(3), q, noise).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_linear_drift() {
        let m = QuadModel::linear(
            DMatrix::identity(2, 2),
            SpdMatrix::new(DMatrix::identity(2, 2)).unwrap(),
            NoiseSpec::White,
        )
        .unwrap();
        assert_eq!(m.full_drift(&[1.0, 2.0]).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn benchmark_drift_at_ones() {
        let m = QuadModel::two_dimensional_benchmark(NoiseSpec::White);
        let f = m.full_drift(&[1.0, 1.0]);
        assert_relative_eq!(f[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(f[1], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn lorenz_drift_at_ones() {
        let m = QuadModel::lorenz63(10.0, 28.0, 8.0 / 3.0, NoiseSpec::colored(0.5).unwrap());
        let f = m.full_drift(&[1.0, 1.0, 1.0]);
        assert_relative_eq!(f[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(f[1], 26.0, epsilon = 1e-14);
        assert_relative_eq!(f[2], 1.0 - 8.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn drift_is_linear_in_each_block() {
        let m = QuadModel::two_dimensional_benchmark(NoiseSpec::White);
        let x = [0.3, -1.7];
        let mut doubled = m.clone();
        doubled.b = QuadTensor::from_matrix(m.b.as_matrix() * 2.0).unwrap();
        let lhs = doubled.full_drift(&x) - m.full_drift(&x);
        assert_relative_eq!(lhs, m.quad_part(&x), epsilon = 1e-14);
    }

    #[test]
    fn colored_gamma_must_be_positive() {
        assert!(NoiseSpec::colored(0.0).is_err());
        assert!(NoiseSpec::colored(-1.0).is_err());
    }
}
